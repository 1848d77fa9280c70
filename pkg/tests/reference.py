"""Independent numpy re-implementations used as test oracles.

Nothing here shares code with ``biseg.slm``: the cell is written out gate by
gate and every segment is rescored from scratch.
"""

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def unpack(lstm):
    return (lstm.w_ih.detach().numpy(), lstm.w_hh.detach().numpy(), lstm.bias.detach().numpy())


def ref_cell(weights, h, c, x):
    w_ih, w_hh, b = weights
    hidden = h.shape[0]
    gates = {}
    for idx, name in enumerate(("input", "forget", "output", "cell")):
        cols = slice(idx * hidden, (idx + 1) * hidden)
        gates[name] = x @ w_ih[:, cols] + h @ w_hh[:, cols] + b[cols]
    c_new = sigmoid(gates["forget"]) * c + sigmoid(gates["input"]) * np.tanh(gates["cell"])
    h_new = sigmoid(gates["output"]) * np.tanh(c_new)
    return h_new, c_new


def log_softmax(z):
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def naive_segment_score(model, ids, start, length, direction="fwd"):
    """Score one segment by re-running the context from the sentence start."""
    seq = list(ids)[::-1] if direction == "bwd" else list(ids)
    suffix = "fwd" if direction == "fwd" else "bwd"
    ctx = unpack(getattr(model, f"ctx_{suffix}"))
    lm = unpack(getattr(model, f"lm_{suffix}"))
    if model.share_proj:
        proj, bias = model.out_fwd, model.out_bias_fwd
    else:
        proj, bias = getattr(model, f"out_{suffix}"), getattr(model, f"out_bias_{suffix}")
    proj, bias = proj.detach().numpy(), bias.detach().numpy()
    emb = model.embed.detach().numpy()
    hidden = model.hidden_dim

    h, c = np.zeros(hidden), np.zeros(hidden)
    for t in range(start):
        h, c = ref_cell(ctx, h, c, emb[seq[t]])
    if model.zero_cell:
        c = np.zeros(hidden)

    total = 0.0
    inputs = [model.eos_id] + seq[start:start + length]
    targets = seq[start:start + length] + [model.eos_id]
    for x, y in zip(inputs, targets):
        h, c = ref_cell(lm, h, c, emb[x])
        total += log_softmax(h @ proj + bias)[y]
    return total


def naive_table(model, ids, t_max, direction="fwd"):
    n = len(ids)
    out = np.full((n, t_max), np.nan)
    for s in range(n):
        for k in range(1, min(t_max, n - s) + 1):
            out[s, k - 1] = naive_segment_score(model, ids, s, k, direction)
    return out
