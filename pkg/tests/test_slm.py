import math

import numpy as np
import pytest
import torch

from biseg.slm import (
    CheckpointFormatError, HiddenState, LSTMParams, SegmentalLM, encode_context, load_checkpoint,
    lstm_step, save_checkpoint, score_batch, score_bidi, score_segments,
)
from reference import naive_table, ref_cell, unpack


def rand_lstm(seed, e=3, h=4, scale=0.5):
    gen = torch.Generator().manual_seed(seed)
    p = LSTMParams(e, h)
    with torch.no_grad():
        for t in (p.w_ih, p.w_hh, p.bias):
            t.copy_((torch.rand(t.shape, generator=gen, dtype=torch.float64) - 0.5) * 2 * scale)
    return p


def rand_model(seed, v=6, e=4, h=5, init_range=0.5, **kw):
    return SegmentalLM.initialized(v, v - 1, e, h, seed=seed, init_range=init_range, **kw)


def rand_ids(rng, n, v):
    return [int(x) for x in rng.integers(0, v - 1, size=n)]  # excludes eos = v - 1


# lstm_step

def test_zero_weights_give_zero_hidden():
    p = LSTMParams(3, 4)
    s = HiddenState(torch.zeros(4, dtype=torch.float64), torch.zeros(4, dtype=torch.float64))
    out = lstm_step(p, s, torch.tensor([1.0, -2.0, 3.0], dtype=torch.float64))
    assert torch.equal(out.h, torch.zeros(4, dtype=torch.float64))


def test_lstm_step_matches_reference_cell():
    rng = np.random.default_rng(0)
    for seed in range(20):
        p = rand_lstm(seed)
        h, c, x = rng.normal(size=4), rng.normal(size=4), rng.normal(size=3)
        out = lstm_step(p, HiddenState(torch.from_numpy(h), torch.from_numpy(c)), torch.from_numpy(x))
        rh, rc = ref_cell(unpack(p), h, c, x)
        assert np.max(np.abs(out.h.detach().numpy() - rh)) <= 1e-10
        assert np.max(np.abs(out.c.detach().numpy() - rc)) <= 1e-10


def test_hidden_stays_bounded():
    p = rand_lstm(3, scale=3.0)
    rng = np.random.default_rng(1)
    s = HiddenState(torch.zeros(4, dtype=torch.float64), torch.zeros(4, dtype=torch.float64))
    for _ in range(200):
        s = lstm_step(p, s, torch.from_numpy(rng.uniform(-5, 5, size=3)))
        assert s.h.abs().max() <= 1.0


# encode_context

def test_encode_context_single_char_one_step():
    m = rand_model(0)
    m.counter.reset()
    states = encode_context(m, [2])
    assert len(states) == 2 and m.counter.context == 1
    assert torch.equal(states[0].h, torch.zeros(m.hidden_dim, dtype=torch.float64))


def test_encode_context_is_repeated_steps():
    m = rand_model(1)
    ids = [0, 3, 1, 2]
    for direction, seq in (("fwd", ids), ("bwd", ids[::-1])):
        states = encode_context(m, ids, direction)
        ctx = m.ctx_fwd if direction == "fwd" else m.ctx_bwd
        s = HiddenState(torch.zeros(m.hidden_dim, dtype=torch.float64), torch.zeros(m.hidden_dim, dtype=torch.float64))
        for t, x in enumerate(seq, 1):
            s = lstm_step(ctx, s, m.embed[x])
            assert torch.equal(s.h, states[t].h) and torch.equal(s.c, states[t].c)


def test_scoring_uses_cached_context():
    m = rand_model(2)
    m.counter.reset()
    score_segments(m, [0, 1, 2, 3, 4, 0, 1], "fwd", 3)
    assert m.counter.context == 7
    assert m.counter.lm <= 7 * 4


# score_segments

def test_uniform_model_scores():
    v = 5
    m = SegmentalLM(v, v - 1, 3, 3)
    table = score_segments(m, [0, 1, 2, 3], "fwd", 3)
    for s in range(4):
        for k in range(1, min(3, 4 - s) + 1):
            assert table.score(s, k) == pytest.approx(-(k + 1) * math.log(v), abs=1e-12)


@pytest.mark.parametrize("direction", ["fwd", "bwd"])
def test_shared_prefix_matches_naive(direction):
    rng = np.random.default_rng(5)
    m = rand_model(5)
    ids = rand_ids(rng, 5, 6)
    table = score_segments(m, ids, direction, 3)
    np.testing.assert_allclose(table.values, naive_table(m, ids, 3, direction), atol=1e-9, equal_nan=True)


def test_zero_cell_and_shared_projection_variants_match_naive():
    rng = np.random.default_rng(6)
    for kw in ({"zero_cell": True}, {"share_proj": True}):
        m = rand_model(6, **kw)
        ids = rand_ids(rng, 6, 6)
        for d in ("fwd", "bwd"):
            np.testing.assert_allclose(score_segments(m, ids, d, 4).values, naive_table(m, ids, 4, d),
                                       atol=1e-9, equal_nan=True)


def test_softmax_normalizes_at_every_emission():
    m = rand_model(7)
    states = encode_context(m, [0, 1, 2])
    s = states[1]
    for x in (m.eos_id, 1, 2):
        s = lstm_step(m.lm_fwd, s, m.embed[x])
        probs = torch.softmax(s.h @ m.out_fwd + m.out_bias_fwd, dim=-1)
        assert abs(float(probs.sum().detach()) - 1.0) <= 1e-6


def test_batched_scores_equal_single_sentence_scores():
    rng = np.random.default_rng(8)
    m = rand_model(8)
    sents = [rand_ids(rng, n, 6) for n in (1, 4, 7, 3)]
    with torch.no_grad():
        batch = score_batch(m, sents, 3, "bwd")
    for i, ids in enumerate(sents):
        single = score_segments(m, ids, "bwd", 3)
        mask = single.defined_mask()
        np.testing.assert_allclose(batch[i, :len(ids)].numpy()[mask], single.values[mask], atol=1e-12)


def test_scores_finite_and_nonpositive():
    m = rand_model(9, init_range=2.0)
    table = score_segments(m, [0, 1, 2, 3, 4, 3, 2], "fwd", 4)
    vals = table.values[table.defined_mask()]
    assert np.all(np.isfinite(vals)) and np.all(vals <= 0)


# score_bidi

def test_bidi_single_char():
    fwd, bwd = score_bidi(rand_model(10), [3], 3)
    assert fwd.values.shape == (1, 3) and np.isfinite(fwd.score(0, 1)) and np.isfinite(bwd.score(0, 1))


def test_tied_directions_on_palindrome_give_equal_tables():
    m = rand_model(11)
    with torch.no_grad():
        for a, b in ((m.ctx_bwd, m.ctx_fwd), (m.lm_bwd, m.lm_fwd)):
            for pa, pb in zip(a.parameters(), b.parameters()):
                pa.copy_(pb)
        m.out_bwd.copy_(m.out_fwd)
        m.out_bias_bwd.copy_(m.out_bias_fwd)
    fwd, bwd = score_bidi(m, [0, 1, 2, 1, 0], 3)
    # reading a palindrome backwards with tied weights repeats the forward computation
    np.testing.assert_allclose(fwd.values, bwd.values, atol=1e-9, equal_nan=True)


def test_bidi_random_passes_naive_oracle():
    rng = np.random.default_rng(12)
    m = rand_model(12)
    ids = rand_ids(rng, 6, 6)
    fwd, bwd = score_bidi(m, ids, 3)
    np.testing.assert_allclose(fwd.values, naive_table(m, ids, 3, "fwd"), atol=1e-9, equal_nan=True)
    np.testing.assert_allclose(bwd.values, naive_table(m, ids, 3, "bwd"), atol=1e-9, equal_nan=True)


# checkpoint

def test_checkpoint_round_trip(tmp_path):
    m = rand_model(13, share_proj=True, zero_cell=True)
    path = tmp_path / "m.sgb"
    save_checkpoint(m, path)
    data = path.read_bytes()
    assert data[:4] == b"SGB1"
    back = load_checkpoint(path, m.eos_id)
    assert back.share_proj and back.zero_cell
    for a, b in zip(m.ordered_tensors(), back.ordered_tensors()):
        assert torch.equal(a, b)


def test_checkpoint_corruption_detected(tmp_path):
    m = rand_model(14)
    path = tmp_path / "m.sgb"
    save_checkpoint(m, path)
    data = path.read_bytes()
    (tmp_path / "bad_magic.sgb").write_bytes(b"XXXX" + data[4:])
    (tmp_path / "short.sgb").write_bytes(data[:-8])
    for name in ("bad_magic.sgb", "short.sgb"):
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(tmp_path / name, m.eos_id)
