"""Bi-directional segmental language model.

Each direction has a context LSTM that reads the sentence once and a
language-model LSTM that, started from the cached context state at a start
offset, spells out a candidate segment character by character and finally
emits the end-of-segment symbol.  All candidate segments sharing a start
offset are scored by one language-model run, so a direction costs at most
``n`` context steps and ``n * (T + 1)`` language-model steps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import CharSequence
from .lattice import SegmentScoreTable

DTYPE = torch.float64
INIT_RANGE = 0.08
MAGIC = b"SGB1"
FLAG_SHARE_PROJ = 1
FLAG_ZERO_CELL = 2
DIRECTIONS = ("fwd", "bwd")


class CheckpointFormatError(ValueError):
    pass


class HiddenState(NamedTuple):
    h: torch.Tensor
    c: torch.Tensor


class LSTMParams(nn.Module):
    """One LSTM's weights; gate blocks are ordered input, forget, output, cell."""

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.w_ih = nn.Parameter(torch.zeros(input_dim, 4 * hidden_dim, dtype=DTYPE))
        self.w_hh = nn.Parameter(torch.zeros(hidden_dim, 4 * hidden_dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(4 * hidden_dim, dtype=DTYPE))


def lstm_step(params: LSTMParams, state: HiddenState, x: torch.Tensor) -> HiddenState:
    z = x @ params.w_ih + state.h @ params.w_hh + params.bias
    i, f, o, g = z.chunk(4, dim=-1)
    c = torch.sigmoid(f) * state.c + torch.sigmoid(i) * torch.tanh(g)
    h = torch.sigmoid(o) * torch.tanh(c)
    return HiddenState(h, c)


@dataclass
class StepCounter:
    """Number of LSTM cell rows evaluated, by kind."""

    context: int = 0
    lm: int = 0

    def reset(self) -> None:
        self.context = 0
        self.lm = 0


class SegmentalLM(nn.Module):
    """Parameters of both directions: shared character embeddings, two context
    LSTMs, two language-model LSTMs and the output projections."""

    def __init__(self, vocab_size: int, eos_id: int, embed_dim: int = 300, hidden_dim: int = 300,
                 share_proj: bool = False, zero_cell: bool = False):
        super().__init__()
        if not 0 <= eos_id < vocab_size:
            raise ValueError(f"eos id {eos_id} outside vocabulary of size {vocab_size}")
        self.vocab_size = vocab_size
        self.eos_id = eos_id
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.share_proj = share_proj
        self.zero_cell = zero_cell
        self.embed = nn.Parameter(torch.zeros(vocab_size, embed_dim, dtype=DTYPE))
        self.ctx_fwd = LSTMParams(embed_dim, hidden_dim)
        self.ctx_bwd = LSTMParams(embed_dim, hidden_dim)
        self.lm_fwd = LSTMParams(embed_dim, hidden_dim)
        self.lm_bwd = LSTMParams(embed_dim, hidden_dim)
        self.out_fwd = nn.Parameter(torch.zeros(hidden_dim, vocab_size, dtype=DTYPE))
        self.out_bias_fwd = nn.Parameter(torch.zeros(vocab_size, dtype=DTYPE))
        if not share_proj:
            self.out_bwd = nn.Parameter(torch.zeros(hidden_dim, vocab_size, dtype=DTYPE))
            self.out_bias_bwd = nn.Parameter(torch.zeros(vocab_size, dtype=DTYPE))
        self.counter = StepCounter()

    @classmethod
    def initialized(cls, vocab_size: int, eos_id: int, embed_dim: int, hidden_dim: int,
                    seed: int = 0, init_range: float = INIT_RANGE, **kwargs) -> "SegmentalLM":
        model = cls(vocab_size, eos_id, embed_dim, hidden_dim, **kwargs)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in model.ordered_tensors():
                p.copy_(torch.rand(p.shape, generator=gen, dtype=DTYPE) * (2 * init_range) - init_range)
        return model

    def ordered_tensors(self) -> list[torch.Tensor]:
        """Parameters in checkpoint order."""
        out = [self.embed]
        for lstm in (self.ctx_fwd, self.ctx_bwd, self.lm_fwd, self.lm_bwd):
            out += [lstm.w_ih, lstm.w_hh, lstm.bias]
        out.append(self.out_fwd)
        if not self.share_proj:
            out.append(self.out_bwd)
        out.append(self.out_bias_fwd)
        if not self.share_proj:
            out.append(self.out_bias_bwd)
        return out

    def direction(self, direction: str) -> tuple[LSTMParams, LSTMParams, torch.Tensor, torch.Tensor]:
        if direction == "fwd":
            return self.ctx_fwd, self.lm_fwd, self.out_fwd, self.out_bias_fwd
        if direction == "bwd":
            if self.share_proj:
                return self.ctx_bwd, self.lm_bwd, self.out_fwd, self.out_bias_fwd
            return self.ctx_bwd, self.lm_bwd, self.out_bwd, self.out_bias_bwd
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")

    @property
    def flags(self) -> int:
        return (FLAG_SHARE_PROJ if self.share_proj else 0) | (FLAG_ZERO_CELL if self.zero_cell else 0)


def _oriented(ids: Sequence[int], direction: str) -> list[int]:
    return list(ids)[::-1] if direction == "bwd" else list(ids)


def _pad(rows: Sequence[Sequence[int]], fill: int) -> torch.Tensor:
    width = max(len(r) for r in rows)
    return torch.tensor([list(r) + [fill] * (width - len(r)) for r in rows], dtype=torch.long)


def _context_states(model: SegmentalLM, ctx: LSTMParams, ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Context states for a padded ``(B, L)`` batch; returns ``(L + 1, B, H)`` tensors."""
    batch, length = ids.shape
    emb = model.embed[ids]
    state = HiddenState(torch.zeros(batch, model.hidden_dim, dtype=DTYPE),
                        torch.zeros(batch, model.hidden_dim, dtype=DTYPE))
    hs, cs = [state.h], [state.c]
    for t in range(length):
        state = lstm_step(ctx, state, emb[:, t])
        model.counter.context += batch
        hs.append(state.h)
        cs.append(state.c)
    return torch.stack(hs), torch.stack(cs)


def _score_oriented(model: SegmentalLM, ids: torch.Tensor, direction: str, t_max: int) -> torch.Tensor:
    """Segment scores for a padded batch already in reading order of ``direction``.

    Returns ``(B, L, T)``; cells with ``s + k > length`` are finite filler.
    """
    if t_max < 1:
        raise ValueError("maximum word length must be at least 1")
    ctx, lm, proj, bias = model.direction(direction)
    batch, length = ids.shape
    hs, cs = _context_states(model, ctx, ids)
    h0 = hs[:length].transpose(0, 1)
    c0 = torch.zeros_like(h0) if model.zero_cell else cs[:length].transpose(0, 1)
    state = HiddenState(h0, c0)
    emb = model.embed[ids]
    steps = min(t_max, length)
    eos_in = model.embed[model.eos_id].expand(batch, length, model.embed_dim)

    # step i emits the distribution after i segment characters; rows s <= L - i stay active
    logps = []
    for i in range(steps + 1):
        rows = length if i == 0 else length - i + 1
        x = eos_in if i == 0 else emb[:, i - 1:length]
        state = HiddenState(state.h[:, :rows], state.c[:, :rows])
        state = lstm_step(lm, state, x)
        model.counter.lm += batch * rows
        logps.append(torch.log_softmax(state.h @ proj + bias, dim=-1))

    cum = torch.zeros(batch, length, dtype=DTYPE)
    cols = []
    for k in range(1, t_max + 1):
        rows = length - k + 1
        if rows <= 0:
            cols.append(torch.zeros(batch, length, dtype=DTYPE))
            continue
        chars = ids[:, k - 1:length]
        char_lp = logps[k - 1][:, :rows].gather(-1, chars.unsqueeze(-1)).squeeze(-1)
        cum = cum[:, :rows] + char_lp
        col = cum + logps[k][:, :rows, model.eos_id]
        cols.append(torch.cat([col, torch.zeros(batch, length - rows, dtype=DTYPE)], dim=1))
    return torch.stack(cols, dim=-1)


def score_batch(model: SegmentalLM, sentences: Sequence[CharSequence | Sequence[int]],
                t_max: int, direction: str) -> torch.Tensor:
    """Differentiable ``(B, L, T)`` score tensor; backward rows index the reversed sentences."""
    rows = [_oriented(getattr(s, "ids", s), direction) for s in sentences]
    return _score_oriented(model, _pad(rows, model.eos_id), direction, t_max)


def to_table(scores: torch.Tensor, n: int) -> SegmentScoreTable:
    """Trim one row of a batched score tensor into a table with undefined cells masked."""
    values = scores[:n].detach().numpy().copy()
    table = SegmentScoreTable(values)
    table.values[~table.defined_mask()] = np.nan
    return table


def encode_context(model: SegmentalLM, sentence: CharSequence | Sequence[int],
                   direction: str = "fwd") -> list[HiddenState]:
    ids = _oriented(getattr(sentence, "ids", sentence), direction)
    if not ids:
        raise ValueError("cannot encode an empty sentence")
    ctx = model.direction(direction)[0]
    hs, cs = _context_states(model, ctx, torch.tensor([ids]))
    return [HiddenState(h[0], c[0]) for h, c in zip(hs, cs)]


def score_segments(model: SegmentalLM, sentence: CharSequence | Sequence[int],
                   direction: str = "fwd", t_max: int = 3) -> SegmentScoreTable:
    ids = getattr(sentence, "ids", sentence)
    with torch.no_grad():
        scores = score_batch(model, [ids], t_max, direction)
    return to_table(scores[0], len(ids))


def score_bidi(model: SegmentalLM, sentence: CharSequence | Sequence[int],
               t_max: int = 3) -> tuple[SegmentScoreTable, SegmentScoreTable]:
    return (score_segments(model, sentence, "fwd", t_max),
            score_segments(model, sentence, "bwd", t_max))


def _header(model: SegmentalLM) -> bytes:
    return MAGIC + struct.pack("<4I", model.vocab_size, model.embed_dim, model.hidden_dim, model.flags)


def save_checkpoint(model: SegmentalLM, path: str | Path) -> None:
    """Write ``SGB1``, little-endian u32 V, E, H, flags, then every tensor as flat f64."""
    body = b"".join(p.detach().numpy().astype("<f8").tobytes() for p in model.ordered_tensors())
    Path(path).write_bytes(_header(model) + body)


def load_checkpoint(path: str | Path, eos_id: int) -> SegmentalLM:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a segmental LM checkpoint")
    vocab_size, embed_dim, hidden_dim, flags = struct.unpack("<4I", data[4:20])
    if flags & ~(FLAG_SHARE_PROJ | FLAG_ZERO_CELL):
        raise CheckpointFormatError(f"{path}: unknown flag bits {flags:#x}")
    model = SegmentalLM(vocab_size, eos_id, embed_dim, hidden_dim,
                        share_proj=bool(flags & FLAG_SHARE_PROJ), zero_cell=bool(flags & FLAG_ZERO_CELL))
    tensors = model.ordered_tensors()
    expected = 20 + 8 * sum(p.numel() for p in tensors)
    if len(data) != expected:
        raise CheckpointFormatError(f"{path}: size {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=20)
    offset = 0
    with torch.no_grad():
        for p in tensors:
            p.copy_(torch.from_numpy(flat[offset:offset + p.numel()].copy()).reshape(p.shape))
            offset += p.numel()
    return model
