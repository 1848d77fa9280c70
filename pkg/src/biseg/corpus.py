"""Reading raw text, preprocessing settings, and the character vocabulary.

Three preprocessing settings are supported:

* ``1``: each line is one sentence, whitespace removed.
* ``3``: punctuation marks additionally act as hard delimiters and are dropped.
* ``4``: as ``3``, and every maximal run of characters outside the native
  script is collapsed into a single placeholder symbol.
"""

from __future__ import annotations

import string
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

EOS = "<EOS>"
SPECIAL = "<SPX>"
UNK = "<UNK>"
RESERVED = (EOS, SPECIAL, UNK)
SETTINGS = (1, 3, 4)

# (lo, hi) inclusive codepoint ranges
CJK_RANGES = (
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2FA1F),
    (0x3005, 0x3007),
)
THAI_RANGES = ((0x0E00, 0x0E7F),)


def is_punctuation(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def in_ranges(ranges: Sequence[tuple[int, int]]) -> Callable[[str], bool]:
    def check(ch: str) -> bool:
        cp = ord(ch)
        return any(lo <= cp <= hi for lo, hi in ranges)
    return check


@dataclass(frozen=True)
class Preprocessor:
    """Splits a raw line into sentence chunks under a preprocessing setting.

    ``punctuation`` overrides the default punctuation test with an explicit
    character set; ``native`` decides which characters survive setting 4.
    """

    setting: int = 1
    punctuation: frozenset[str] | None = None
    native: Callable[[str], bool] = in_ranges(CJK_RANGES)

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown preprocessing setting {self.setting}; expected one of {SETTINGS}")

    def is_punct(self, ch: str) -> bool:
        if self.punctuation is not None:
            return ch in self.punctuation
        return is_punctuation(ch)

    def tokens(self, line: str) -> list[tuple[str, str, bool]]:
        """Units of a line as ``(symbol, raw, is_delimiter)`` triples."""
        chars = [c for c in line if not c.isspace()]
        out: list[tuple[str, str, bool]] = []
        for ch in chars:
            if self.setting != 1 and self.is_punct(ch):
                out.append((ch, ch, True))
            elif self.setting == 4 and not self.native(ch):
                if out and out[-1][0] == SPECIAL:
                    _, raw, _ = out.pop()
                    out.append((SPECIAL, raw + ch, False))
                else:
                    out.append((SPECIAL, ch, False))
            else:
                out.append((ch, ch, False))
        return out

    def chunks(self, line: str) -> list["Chunk"]:
        result, symbols, raw = [], [], []
        for sym, span, delim in self.tokens(line):
            if delim:
                if symbols:
                    result.append(Chunk(tuple(symbols), tuple(raw)))
                symbols, raw = [], []
            else:
                symbols.append(sym)
                raw.append(span)
        if symbols:
            result.append(Chunk(tuple(symbols), tuple(raw)))
        return result


@dataclass(frozen=True)
class Chunk:
    """A preprocessed sentence before vocabulary lookup."""

    symbols: tuple[str, ...]
    raw: tuple[str, ...]


@dataclass(frozen=True)
class CharSequence:
    ids: tuple[int, ...]
    raw: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def text(self) -> str:
        return "".join(self.raw)


@dataclass(frozen=True)
class Vocab:
    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbol in vocabulary")
        if EOS not in self.symbols:
            raise ValueError("vocabulary lacks the end-of-segment symbol")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, sym: str) -> bool:
        return sym in self._index

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def special_id(self) -> int | None:
        return self._index.get(SPECIAL)

    @property
    def unk_id(self) -> int | None:
        return self._index.get(UNK)

    def index(self, sym: str) -> int:
        """Id of ``sym``; unseen characters fall back to the placeholder, then to UNK."""
        if sym in self._index and sym != EOS:
            return self._index[sym]
        for fallback in (SPECIAL, UNK):
            if fallback in self._index:
                return self._index[fallback]
        raise KeyError(f"character {sym!r} not in vocabulary and no fallback symbol available")

    def encode(self, chunk: Chunk | str) -> CharSequence:
        if isinstance(chunk, str):
            chunk = Chunk(tuple(chunk), tuple(chunk))
        if not chunk.symbols:
            raise ValueError("cannot encode an empty sentence")
        return CharSequence(tuple(self.index(s) for s in chunk.symbols), chunk.raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.symbols), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(tuple(text.split("\n")[:-1]))


def build_vocab(corpus: Iterable[Chunk | str | Sequence[str]], special: bool = False,
                unk: bool = False) -> Vocab:
    """Distinct symbols in first-occurrence order, then the reserved symbols.

    ``special`` forces the placeholder into the vocabulary even if the corpus
    never produced one.
    """
    seen: dict[str, None] = {}
    for item in corpus:
        symbols = item.symbols if isinstance(item, Chunk) else item
        for sym in symbols:
            if sym == SPECIAL:
                special = True
            elif sym not in seen:
                if sym in RESERVED:
                    raise ValueError(f"reserved token {sym!r} found in corpus")
                seen[sym] = None
    symbols = list(seen) + [EOS]
    if special:
        symbols.append(SPECIAL)
    if unk:
        symbols.append(UNK)
    return Vocab(tuple(symbols))


def read_lines(path: str | Path) -> list[str]:
    """Non-blank lines of a UTF-8 file; decode errors name the byte offset."""
    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as err:
        raise UnicodeDecodeError(
            err.encoding, err.object, err.start, err.end,
            f"{err.reason} at byte offset {err.start} in {path}") from None
    if text.startswith("\ufeff"):
        text = text[1:]
    return [ln for ln in text.splitlines() if ln.strip()]


def read_chunks(path: str | Path, setting: int = 1, preprocessor: Preprocessor | None = None) -> list[Chunk]:
    pre = preprocessor or Preprocessor(setting)
    return [c for line in read_lines(path) for c in pre.chunks(line)]


def load_corpus(path: str | Path, setting: int = 1, vocab: Vocab | None = None,
                preprocessor: Preprocessor | None = None) -> list[CharSequence]:
    """Preprocess a raw file into encoded sentences.

    Without ``vocab`` the vocabulary is built from the file itself; rebuild it
    with ``build_vocab(read_chunks(path, setting))`` to get the same mapping.
    """
    chunks = read_chunks(path, setting, preprocessor)
    if vocab is None:
        vocab = build_vocab(chunks, special=(setting == 4))
    return [vocab.encode(c) for c in chunks]


@dataclass(frozen=True)
class CorpusStats:
    word_types: int = 0
    word_tokens: int = 0
    char_types: int = 0
    char_tokens: int = 0


def corpus_stats(gold_segmented_file: str | Path) -> CorpusStats:
    words = Counter()
    chars = Counter()
    for line in read_lines(gold_segmented_file):
        for w in line.split():
            words[w] += 1
            chars.update(w)
    return CorpusStats(len(words), sum(words.values()), len(chars), sum(chars.values()))
