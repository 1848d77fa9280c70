"""Planted-lexicon corpora with known segmentations, for sanity runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCD"


@dataclass(frozen=True)
class PlantedCorpus:
    lexicon: tuple[str, ...]
    probs: tuple[float, ...]
    sentences: tuple[tuple[str, ...], ...]

    def raw(self) -> list[str]:
        return ["".join(words) for words in self.sentences]

    def gold(self) -> list[str]:
        return [" ".join(words) for words in self.sentences]


def planted_lexicon(n_words: int, rng: np.random.Generator, alphabet: str = DEFAULT_ALPHABET,
                    lengths: tuple[int, ...] = (1, 2, 3)) -> tuple[str, ...]:
    words: dict[str, None] = {}
    while len(words) < n_words:
        k = int(rng.choice(lengths))
        words["".join(rng.choice(list(alphabet), size=k))] = None
    return tuple(words)


def planted_corpus(n_sentences: int, n_words: int = 50, seed: int = 0,
                   alphabet: str = DEFAULT_ALPHABET, min_words: int = 3, max_words: int = 8,
                   zipf: float = 1.0) -> PlantedCorpus:
    """Sentences of words drawn i.i.d. from a Zipf-weighted random lexicon."""
    rng = np.random.default_rng(seed)
    lexicon = planted_lexicon(n_words, rng, alphabet)
    weights = 1.0 / np.arange(1, n_words + 1) ** zipf
    probs = weights / weights.sum()
    sentences = []
    for _ in range(n_sentences):
        m = int(rng.integers(min_words, max_words + 1))
        sentences.append(tuple(lexicon[i] for i in rng.choice(n_words, size=m, p=probs)))
    return PlantedCorpus(lexicon, tuple(probs), tuple(sentences))
