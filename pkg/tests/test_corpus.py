import pytest
from hypothesis import given, strategies as st

from biseg.corpus import (
    EOS, SPECIAL, UNK, Chunk, CorpusStats, Preprocessor, THAI_RANGES, Vocab, build_vocab,
    corpus_stats, in_ranges, load_corpus, read_chunks,
)


@pytest.fixture
def write(tmp_path):
    def _write(text, name="corpus.txt", raw=False):
        path = tmp_path / name
        if raw:
            path.write_bytes(text)
        else:
            path.write_text(text, encoding="utf-8")
        return path
    return _write


def test_setting1_whole_line(write):
    seqs = load_corpus(write("我从小学唱歌\n"), 1)
    assert len(seqs) == 1 and len(seqs[0].ids) == 6


def test_setting1_strips_whitespace_and_crlf(write):
    seqs = load_corpus(write("我 从小\r\n\r\n学 唱歌\r\n"), 1)
    assert [s.text for s in seqs] == ["我从小", "学唱歌"]


def test_setting3_splits_at_punctuation(write):
    seqs = load_corpus(write("你好，世界"), 3)
    assert [s.text for s in seqs] == ["你好", "世界"]


def test_setting3_ascii_punctuation(write):
    assert [c.raw for c in read_chunks(write("ab,c.d!"), 3)] == [("a", "b"), ("c",), ("d",)]


def test_setting4_collapses_non_native_runs(write):
    path = write("共ABC123节")
    chunks = read_chunks(path, 4)
    assert chunks == [Chunk(("共", SPECIAL, "节"), ("共", "ABC123", "节"))]
    seqs = load_corpus(path, 4)
    vocab = build_vocab(chunks)
    assert seqs[0].ids == (vocab.index("共"), vocab.special_id, vocab.index("节"))


def test_setting4_native_range_is_configurable():
    thai = Preprocessor(4, native=in_ranges(THAI_RANGES))
    chunks = thai.chunks("สวัสดีABCครับ")
    assert chunks[0].symbols.count(SPECIAL) == 1
    assert "".join(chunks[0].raw) == "สวัสดีABCครับ"


def test_custom_punctuation_set():
    pre = Preprocessor(3, punctuation=frozenset("|"))
    assert [c.symbols for c in pre.chunks("ab|c，d")] == [("a", "b"), ("c", "，", "d")]


def test_empty_file(write):
    assert load_corpus(write(""), 1) == []


def test_invalid_utf8_names_offset(write):
    path = write(b"abc\xffdef", raw=True)
    with pytest.raises(UnicodeDecodeError, match="byte offset 3"):
        load_corpus(path, 1)


def test_unknown_setting():
    with pytest.raises(ValueError):
        Preprocessor(2)


# build_vocab

def test_vocab_aba():
    vocab = build_vocab(["aba"])
    assert vocab.symbols == ("a", "b", EOS) and len(vocab) == 3


def test_vocab_distinct_chars_plus_eos():
    vocab = build_vocab(["我从小学", "我从小"])
    assert len(vocab) == 5
    assert vocab.symbols[:4] == ("我", "从", "小", "学")


def test_vocab_special_and_unk_reserved_at_end():
    vocab = build_vocab([("a", SPECIAL, "b")], unk=True)
    assert vocab.symbols == ("a", "b", EOS, SPECIAL, UNK)
    assert vocab.index("zz") == vocab.special_id
    assert build_vocab(["ab"], unk=True).index("q") == build_vocab(["ab"], unk=True).unk_id
    with pytest.raises(KeyError):
        build_vocab(["ab"]).index("q")


def test_eos_never_encoded():
    vocab = build_vocab(["ab"])
    seq = vocab.encode("abba")
    assert vocab.eos_id not in seq.ids and all(i < len(vocab) for i in seq.ids)


def test_vocab_file_round_trip(tmp_path):
    vocab = build_vocab([("甲", SPECIAL, "乙")], unk=True)
    vocab.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text(encoding="utf-8").splitlines()
    assert lines == ["甲", "乙", "<EOS>", "<SPX>", "<UNK>"]
    assert Vocab.load(tmp_path / "vocab.txt") == vocab


def test_duplicate_symbols_rejected():
    with pytest.raises(ValueError):
        Vocab(("a", "a", EOS))


# corpus_stats

def test_stats_hand_count(write):
    stats = corpus_stats(write("我 从小 学\n我 学"))
    # characters 我 从 小 学 我 学: four distinct
    assert stats == CorpusStats(word_types=3, word_tokens=5, char_types=4, char_tokens=6)


def test_stats_empty(write):
    assert corpus_stats(write("")) == CorpusStats(0, 0, 0, 0)


# properties

lines = st.text(alphabet=st.sampled_from(list("我从小学唱歌，。 abAB12!")), min_size=1, max_size=30)


@given(lines)
def test_setting1_round_trip(line):
    chunks = Preprocessor(1).chunks(line)
    expected = "".join(line.split())
    assert "".join("".join(c.raw) for c in chunks) == expected


@given(lines)
def test_setting3_characters_subset_of_setting1(line):
    from collections import Counter
    s1 = Counter(ch for c in Preprocessor(1).chunks(line) for ch in c.raw)
    s3 = Counter(ch for c in Preprocessor(3).chunks(line) for ch in c.raw)
    assert not s3 - s1


@given(st.lists(lines, min_size=1, max_size=5))
def test_build_vocab_deterministic(corpus):
    chunks = [c for line in corpus for c in Preprocessor(1).chunks(line)]
    if chunks:
        assert build_vocab(chunks) == build_vocab(list(chunks))
