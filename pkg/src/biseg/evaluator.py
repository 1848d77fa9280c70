"""Word-level precision/recall/F1 and boundary-ambiguity error analysis."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .lattice import ContractError, Segmentation


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    gold_words: int
    pred_words: int
    correct_words: int

    def text(self) -> str:
        return (f"gold words: {self.gold_words}\npredicted words: {self.pred_words}\n"
                f"correct words: {self.correct_words}\nprecision: {self.precision:.4f}\n"
                f"recall: {self.recall:.4f}\nF1: {self.f1:.4f}\n")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["precision", "recall", "f1", "gold_words", "pred_words", "correct_words"])
            w.writerow([self.precision, self.recall, self.f1,
                        self.gold_words, self.pred_words, self.correct_words])


def _check(gold: Sequence[Segmentation], pred: Sequence[Segmentation]) -> None:
    if len(gold) != len(pred):
        raise ContractError(f"{len(gold)} gold sentences but {len(pred)} predicted")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if g.n != p.n:
            raise ContractError(f"sentence {i}: gold length {g.n} != predicted length {p.n}")


def word_f1(gold: Sequence[Segmentation], pred: Sequence[Segmentation]) -> EvalReport:
    _check(gold, pred)
    n_gold = n_pred = n_correct = 0
    for g, p in zip(gold, pred):
        gs, ps = set(g.spans), set(p.spans)
        n_gold += len(gs)
        n_pred += len(ps)
        n_correct += len(gs & ps)
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(precision, recall, f1, n_gold, n_pred, n_correct)


@dataclass(frozen=True)
class AmbiguityCase:
    sentence: int
    start: int
    end: int
    kind: str  # "combination", "overlap" or "residual"
    gold: tuple[str, ...]
    pred: tuple[str, ...]


@dataclass
class AmbiguityReport:
    cases: list[AmbiguityCase] = field(default_factory=list)

    def _count(self, kind: str) -> int:
        return sum(c.kind == kind for c in self.cases)

    @property
    def combination_errors(self) -> int:
        return self._count("combination")

    @property
    def overlap_errors(self) -> int:
        return self._count("overlap")

    @property
    def residual_errors(self) -> int:
        return self._count("residual")

    def text(self) -> str:
        return (f"combination errors: {self.combination_errors}\n"
                f"overlap errors: {self.overlap_errors}\n"
                f"unclassified errors: {self.residual_errors}\n")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["combination_errors", "overlap_errors", "residual_errors"])
            w.writerow([self.combination_errors, self.overlap_errors, self.residual_errors])

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for c in self.cases:
                fh.write(json.dumps({"sentence": c.sentence, "start": c.start, "end": c.end,
                                     "type": c.kind, "gold": list(c.gold), "pred": list(c.pred)},
                                    ensure_ascii=False) + "\n")


def _regions(g: Segmentation, p: Segmentation) -> list[tuple[int, int]]:
    """Spans between consecutive boundaries shared by both segmentations."""
    shared = sorted({0, g.n} | (set(g.boundaries) & set(p.boundaries)))
    return list(zip(shared, shared[1:]))


def _classify(g_words: list[str], p_words: list[str], lexicon: set[str]) -> str:
    for one, two in ((g_words, p_words), (p_words, g_words)):
        if len(one) == 1 and len(two) == 2:
            x, y = two
            if x in lexicon and y in lexicon and x + y in lexicon:
                return "combination"
    if len(g_words) == 2 and len(p_words) == 2:
        # x|yz against xy|z: the two sides cut at different interior points
        a, b = sorted((g_words, p_words), key=lambda ws: len(ws[0]))
        x, yz = a
        xy, z = b
        y = xy[len(x):]
        if y and x + y == xy and y + z == yz and xy in lexicon and yz in lexicon:
            return "overlap"
    return "residual"


def ambiguity_analysis(gold: Sequence[Segmentation], pred: Sequence[Segmentation],
                       lexicon: Iterable[str], texts: Sequence[str]) -> AmbiguityReport:
    """Classify every disagreement region as a combination or overlap error.

    A disagreement region is a maximal stretch bounded by boundaries present in
    both segmentations.  Regions fitting neither pattern are kept as residual.
    """
    _check(gold, pred)
    if len(texts) != len(gold):
        raise ContractError(f"{len(texts)} sentence texts for {len(gold)} segmentations")
    lexicon = set(lexicon)
    report = AmbiguityReport()
    for i, (g, p, text) in enumerate(zip(gold, pred, texts)):
        if len(text) != g.n:
            raise ContractError(f"sentence {i}: text length {len(text)} != segmentation length {g.n}")
        gs, ps = g.spans, p.spans
        for a, b in _regions(g, p):
            g_words = [text[s:e] for s, e in gs if a <= s and e <= b]
            p_words = [text[s:e] for s, e in ps if a <= s and e <= b]
            if g_words == p_words:
                continue
            kind = _classify(g_words, p_words, lexicon)
            report.cases.append(AmbiguityCase(i, a, b, kind, tuple(g_words), tuple(p_words)))
    return report


def gold_lexicon(gold_lines: Iterable[str]) -> set[str]:
    return {w for line in gold_lines for w in line.split()}
