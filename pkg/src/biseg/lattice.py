"""Dynamic programming over the segmentation lattice of a sentence.

Every function here consumes a :class:`SegmentScoreTable`, a dense array of
log-probabilities indexed by ``(start, length - 1)``.  Nothing in this module
knows about the neural model that produced the scores.

All arithmetic is in natural-log space.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

BRUTE_FORCE_MAX_N = 12


class ContractError(ValueError):
    """Raised when inputs violate a documented precondition."""


@dataclass(frozen=True)
class SegmentScoreTable:
    """Log-probabilities of every candidate segment of an ``n``-character sentence.

    ``values[s, k - 1]`` holds the score of the segment starting at offset ``s``
    with length ``k``.  Cells with ``s + k > n`` are undefined and hold NaN so
    that an accidental read poisons the result instead of passing silently.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ContractError(f"score table must be 2-D and nonempty, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def t_max(self) -> int:
        return self.values.shape[1]

    def score(self, start: int, length: int) -> float:
        if not (0 <= start and 1 <= length <= min(self.t_max, self.n - start)):
            raise IndexError(f"segment ({start}, {length}) undefined for n={self.n}, T={self.t_max}")
        return float(self.values[start, length - 1])

    def defined_mask(self) -> np.ndarray:
        s = np.arange(self.n)[:, None]
        k = np.arange(1, self.t_max + 1)[None, :]
        return s + k <= self.n

    @classmethod
    def from_function(cls, n: int, t_max: int, fn) -> "SegmentScoreTable":
        values = np.full((n, t_max), np.nan)
        for s in range(n):
            for k in range(1, min(t_max, n - s) + 1):
                values[s, k - 1] = fn(s, k)
        return cls(values)

    @classmethod
    def constant(cls, n: int, t_max: int, value: float = 0.0) -> "SegmentScoreTable":
        return cls.from_function(n, t_max, lambda s, k: value)

    @classmethod
    def random(cls, n: int, t_max: int, rng: np.random.Generator,
               low: float = -3.0, high: float = -0.1) -> "SegmentScoreTable":
        values = rng.uniform(low, high, size=(n, t_max))
        table = cls(values)
        values[~table.defined_mask()] = np.nan
        return table

    def mirrored(self) -> "SegmentScoreTable":
        """The same scores indexed on the reversed sentence."""
        return SegmentScoreTable.from_function(
            self.n, self.t_max, lambda s, k: self.values[self.n - s - k, k - 1])


@dataclass(frozen=True)
class Segmentation:
    """Word boundaries of an ``n``-character sentence.

    ``boundaries`` are the interior cut offsets; 0 and ``n`` are implicit.
    """

    n: int
    boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        b = tuple(int(x) for x in self.boundaries)
        object.__setattr__(self, "n", int(self.n))
        if self.n < 1:
            raise ContractError("segmentation of an empty sentence")
        if any(not 0 < x < self.n for x in b) or any(x >= y for x, y in zip(b, b[1:])):
            raise ContractError(f"boundaries {b} not strictly increasing inside (0, {self.n})")
        object.__setattr__(self, "boundaries", b)

    @classmethod
    def from_lengths(cls, lengths: Sequence[int]) -> "Segmentation":
        offsets = list(itertools.accumulate(lengths))
        return cls(offsets[-1], tuple(offsets[:-1]))

    @property
    def lengths(self) -> list[int]:
        cuts = (0, *self.boundaries, self.n)
        return [b - a for a, b in zip(cuts, cuts[1:])]

    @property
    def spans(self) -> list[tuple[int, int]]:
        cuts = (0, *self.boundaries, self.n)
        return list(zip(cuts, cuts[1:]))

    def __len__(self) -> int:
        return len(self.boundaries) + 1

    def mirrored(self) -> "Segmentation":
        return Segmentation(self.n, tuple(sorted(self.n - b for b in self.boundaries)))

    def words(self, units: Sequence[str]) -> list[str]:
        if len(units) != self.n:
            raise ContractError(f"{len(units)} units for a segmentation of length {self.n}")
        return ["".join(units[a:b]) for a, b in self.spans]

    def to_text(self, units: Sequence[str]) -> str:
        return " ".join(self.words(units))

    @classmethod
    def from_text(cls, text: str) -> tuple[str, "Segmentation"]:
        """Parse a whitespace-delimited line into (unsegmented chars, Segmentation)."""
        words = text.split()
        if not words:
            raise ContractError("cannot parse a segmentation from an empty line")
        return "".join(words), cls.from_lengths([len(w) for w in words])


@dataclass(frozen=True)
class LatticeResult:
    """Forward variables of one lattice pass.

    ``alpha[t, k]`` is the log mass of the length-``t`` prefix whose final
    ``k`` characters form one word; ``prefix[t]`` is its log-sum over ``k``.
    """

    alpha: np.ndarray
    prefix: np.ndarray
    log_marginal: float


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(x - m))))


def forward_marginal(scores: SegmentScoreTable) -> LatticeResult:
    n, t_max = scores.n, scores.t_max
    v = scores.values
    alpha = np.full((n + 1, t_max + 1), -np.inf)
    prefix = np.full(n + 1, -np.inf)
    alpha[0, 0] = 0.0
    prefix[0] = 0.0
    for t in range(1, n + 1):
        for k in range(1, min(t_max, t) + 1):
            # sum over the previous word length j collapses into prefix[t - k]
            alpha[t, k] = v[t - k, k - 1] + prefix[t - k]
        prefix[t] = _logsumexp(alpha[t, 1:min(t_max, t) + 1])
    return LatticeResult(alpha, prefix, float(prefix[n]))


def backward_marginal(scores_bwd: SegmentScoreTable) -> LatticeResult:
    """Marginal of the backward model; ``scores_bwd`` is indexed on the reversed sentence."""
    return forward_marginal(scores_bwd)


def suffix_marginals(scores: SegmentScoreTable) -> np.ndarray:
    """``out[t]`` = log mass of all segmentations of characters ``t..n-1``."""
    n, t_max = scores.n, scores.t_max
    v = scores.values
    out = np.full(n + 1, -np.inf)
    out[n] = 0.0
    for t in range(n - 1, -1, -1):
        ks = np.arange(1, min(t_max, n - t) + 1)
        out[t] = _logsumexp(v[t, ks - 1] + out[t + ks])
    return out


def segment_posteriors(scores: SegmentScoreTable) -> tuple[float, np.ndarray]:
    """Log marginal and the posterior probability of every segment.

    The posterior of segment ``(s, k)`` is the derivative of the log marginal
    with respect to its score.  Undefined cells get 0.
    """
    fwd = forward_marginal(scores)
    suffix = suffix_marginals(scores)
    s = np.arange(scores.n)[:, None]
    k = np.arange(1, scores.t_max + 1)[None, :]
    mask = scores.defined_mask()
    end = np.minimum(s + k, scores.n)
    logp = fwd.prefix[s] + np.where(mask, scores.values, -np.inf) + suffix[end] - fwd.log_marginal
    return fwd.log_marginal, np.where(mask, np.exp(logp), 0.0)


def viterbi(scores: SegmentScoreTable) -> tuple[Segmentation, float]:
    """Best segmentation with word length at most ``T``.

    Ties at a cell go to the longer final word.
    """
    n, t_max = scores.n, scores.t_max
    v = scores.values
    best = np.full(n + 1, -np.inf)
    back = np.zeros(n + 1, dtype=int)
    best[0] = 0.0
    for t in range(1, n + 1):
        for k in range(1, min(t_max, t) + 1):
            cand = v[t - k, k - 1] + best[t - k]
            if cand >= best[t]:
                best[t] = cand
                back[t] = k
    lengths = []
    t = n
    while t > 0:
        lengths.append(back[t])
        t -= back[t]
    return Segmentation.from_lengths(lengths[::-1]), float(best[n])


def _check_pair(scores_fwd: SegmentScoreTable, scores_bwd: SegmentScoreTable) -> None:
    if scores_fwd.values.shape != scores_bwd.values.shape:
        raise ContractError(
            f"forward table {scores_fwd.values.shape} and backward table "
            f"{scores_bwd.values.shape} differ in shape")


def averaged_table(scores_fwd: SegmentScoreTable, scores_bwd: SegmentScoreTable) -> SegmentScoreTable:
    """Log geometric mean of the forward and (mirrored) backward segment probabilities."""
    _check_pair(scores_fwd, scores_bwd)
    mirrored = scores_bwd.mirrored().values
    return SegmentScoreTable(0.5 * (scores_fwd.values + mirrored))


def sgb_a(scores_fwd: SegmentScoreTable, scores_bwd: SegmentScoreTable) -> Segmentation:
    return viterbi(averaged_table(scores_fwd, scores_bwd))[0]


def sgb_c(scores_fwd: SegmentScoreTable, scores_bwd: SegmentScoreTable) -> Segmentation:
    """Union of the boundaries found by each direction on its own."""
    _check_pair(scores_fwd, scores_bwd)
    fwd, _ = viterbi(scores_fwd)
    bwd, _ = viterbi(scores_bwd)
    merged = set(fwd.boundaries) | set(bwd.mirrored().boundaries)
    return Segmentation(scores_fwd.n, tuple(sorted(merged)))


def enumerate_segmentations(n: int, t_max: int) -> Iterator[tuple[int, ...]]:
    """All word-length compositions of ``n`` with parts at most ``t_max``."""
    if n == 0:
        yield ()
        return
    for k in range(1, min(t_max, n) + 1):
        for rest in enumerate_segmentations(n - k, t_max):
            yield (k, *rest)


def composition_count(n: int, t_max: int) -> int:
    counts = [1] + [0] * n
    for t in range(1, n + 1):
        counts[t] = sum(counts[t - k] for k in range(1, min(t_max, t) + 1))
    return counts[n]


def _path_score(scores: SegmentScoreTable, lengths: Sequence[int]) -> float:
    total, start = 0.0, 0
    for k in lengths:
        total = total + scores.score(start, k)
        start += k
    return total


def _guard(scores: SegmentScoreTable) -> None:
    if scores.n > BRUTE_FORCE_MAX_N:
        raise ContractError(
            f"brute force refused for n={scores.n} > {BRUTE_FORCE_MAX_N}")


def brute_force_marginal(scores: SegmentScoreTable) -> float:
    _guard(scores)
    totals = [_path_score(scores, ls) for ls in enumerate_segmentations(scores.n, scores.t_max)]
    return _logsumexp(np.array(totals))


def brute_force_best(scores: SegmentScoreTable) -> tuple[Segmentation, float]:
    """Exhaustive argmax; ties prefer the longer last word, then the longer
    second-to-last word, and so on (the order Viterbi's backtrace induces)."""
    _guard(scores)
    best_key, best_lengths = None, None
    for ls in enumerate_segmentations(scores.n, scores.t_max):
        key = (_path_score(scores, ls), ls[::-1])
        if best_key is None or key > best_key:
            best_key, best_lengths = key, ls
    return Segmentation.from_lengths(best_lengths), best_key[0]
