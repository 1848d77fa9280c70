"""Maximum marginal-likelihood training of the bi-directional segmental LM.

The per-sentence loss is minus the average of the forward and backward log
marginal likelihoods.  Its gradient is obtained in two stages: the lattice
gives the derivative of each log marginal with respect to every segment
score (the segment posterior), and autograd carries those weights back
through the network.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import CharSequence, Vocab
from .lattice import forward_marginal, segment_posteriors
from .slm import SegmentalLM, save_checkpoint, score_batch, score_bidi, to_table

logger = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite loss {value} for sentence {index} of the batch")
        self.index = index
        self.value = value


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, checkpoint: Path | None, cause: Exception):
        where = f"; last good checkpoint kept at {checkpoint}" if checkpoint else ""
        super().__init__(f"training diverged in epoch {epoch}: {cause}{where}")
        self.epoch = epoch
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    lr: float = 0.001
    epochs: int = 10
    batch_size: int = 16
    t_max: int = 3
    embed_dim: int = 300
    hidden_dim: int = 300
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 0.0  # l2 gradient clipping threshold; 0 disables
    max_len: int = 80
    share_proj: bool = False
    zero_cell: bool = False
    init_range: float = 0.08

    def __post_init__(self):
        for name in ("epochs", "batch_size", "t_max", "embed_dim", "hidden_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0 or self.clip < 0:
            raise ValueError("lr and clip must be non-negative")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "TrainConfig":
        """Read ``key = value`` lines (``#`` starts a comment); keyword overrides win."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values: dict = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or key not in types:
                raise ValueError(f"{path}:{lineno}: cannot parse config line {line!r}")
            values[key] = _coerce(types[key], raw.strip())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(type_name, raw: str):
    type_name = getattr(type_name, "__name__", type_name)
    if type_name == "bool":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    return {"int": int, "float": float}[type_name](raw)


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "seconds"])
            for i, (loss, sec) in enumerate(zip(self.epoch_losses, self.epoch_seconds), 1):
                w.writerow([i, repr(loss), f"{sec:.3f}"])


def sentence_loss(model: SegmentalLM, sentence: CharSequence | Sequence[int], t_max: int) -> float:
    fwd, bwd = score_bidi(model, sentence, t_max)
    return -0.5 * (forward_marginal(fwd).log_marginal + forward_marginal(bwd).log_marginal)


def _ids(sentence) -> Sequence[int]:
    return getattr(sentence, "ids", sentence)


def backprop_batch(model: SegmentalLM, batch: Sequence, t_max: int) -> list[float]:
    """Accumulate the gradient of the mean batch loss into ``.grad``; return per-sentence losses."""
    if not batch:
        raise ValueError("empty batch")
    ids = [_ids(s) for s in batch]
    scores = {d: score_batch(model, ids, t_max, d) for d in ("fwd", "bwd")}
    weights = {d: np.zeros(tuple(scores[d].shape)) for d in scores}
    losses = []
    for i, sent in enumerate(ids):
        n = len(sent)
        total = 0.0
        for d in scores:
            log_z, post = segment_posteriors(to_table(scores[d][i], n))
            weights[d][i, :n] = post
            total += log_z
        loss = -0.5 * total
        if not math.isfinite(loss):
            raise NonFiniteLossError(i, loss)
        losses.append(loss)
    scale = -0.5 / len(ids)
    surrogate = sum((torch.from_numpy(weights[d]) * scores[d]).sum() for d in scores) * scale
    surrogate.backward()
    return losses


def gradient(model: SegmentalLM, batch: Sequence, t_max: int) -> dict[str, torch.Tensor]:
    """Gradient of the mean sentence loss, keyed like ``model.named_parameters()``."""
    model.zero_grad(set_to_none=True)
    backprop_batch(model, batch, t_max)
    grads = {name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
             for name, p in model.named_parameters()}
    model.zero_grad(set_to_none=True)
    return grads


def split_long(corpus: Sequence[CharSequence], max_len: int) -> list[CharSequence]:
    out = []
    for s in corpus:
        for a in range(0, len(s.ids), max_len):
            out.append(CharSequence(s.ids[a:a + max_len], s.raw[a:a + max_len]))
    return out


def make_batches(corpus: Sequence, batch_size: int, rng: np.random.Generator) -> list[list]:
    """Shuffle, group neighbours of similar length, then shuffle batch order."""
    order = rng.permutation(len(corpus))
    order = sorted(order, key=lambda i: len(corpus[i]))
    batches = [[corpus[i] for i in order[a:a + batch_size]] for a in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def new_model(vocab: Vocab, config: TrainConfig) -> SegmentalLM:
    return SegmentalLM.initialized(len(vocab), vocab.eos_id, config.embed_dim, config.hidden_dim,
                                   seed=config.seed, init_range=config.init_range,
                                   share_proj=config.share_proj, zero_cell=config.zero_cell)


def train(corpus: Sequence[CharSequence], vocab: Vocab, config: TrainConfig,
          checkpoint_dir: str | Path | None = None,
          model: SegmentalLM | None = None) -> tuple[SegmentalLM, TrainReport]:
    """Minibatch Adam over shuffled epochs; checkpoints after every epoch.

    On a non-finite loss the model is rolled back to the last completed epoch
    and :class:`TrainingDiverged` is raised.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    torch.manual_seed(config.seed)
    model = model or new_model(vocab, config)
    data = split_long(corpus, config.max_len)
    rng = np.random.default_rng(config.seed)
    optim = torch.optim.Adam(model.parameters(), lr=config.lr,
                             betas=(config.beta1, config.beta2), eps=config.eps)
    ckpt = Path(checkpoint_dir) / "model.sgb" if checkpoint_dir else None
    good_state = {k: v.clone() for k, v in model.state_dict().items()}
    saved: Path | None = None
    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        losses: list[float] = []
        try:
            for batch in make_batches(data, config.batch_size, rng):
                optim.zero_grad(set_to_none=True)
                losses += backprop_batch(model, batch, config.t_max)
                if config.clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip)
                optim.step()
        except NonFiniteLossError as err:
            model.load_state_dict(good_state)
            raise TrainingDiverged(epoch, saved, err) from err
        mean = float(np.mean(losses))
        report.epoch_losses.append(mean)
        report.epoch_seconds.append(time.perf_counter() - t0)
        logger.info("epoch %d  loss %.4f  (%.1fs)", epoch, mean, report.epoch_seconds[-1])
        good_state = {k: v.clone() for k, v in model.state_dict().items()}
        if ckpt is not None:
            save_checkpoint(model, ckpt)
            saved = ckpt
    report.wall_time = time.perf_counter() - start
    return model, report
