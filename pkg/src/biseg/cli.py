"""Command-line entry point: ``biseg {train,segment,eval,analyze,stats,repro}``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or path error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import torch

from . import __version__
from .corpus import (
    SETTINGS, Preprocessor, Vocab, build_vocab, corpus_stats, read_chunks, read_lines,
)
from .evaluator import ambiguity_analysis, gold_lexicon, word_f1
from .lattice import ContractError, Segmentation, SegmentScoreTable, sgb_a, sgb_c, viterbi
from .slm import CheckpointFormatError, SegmentalLM, load_checkpoint, save_checkpoint, score_batch, to_table
from .trainer import TrainConfig, TrainingDiverged, train

logger = logging.getLogger("biseg")

MODEL_FILE = "model.sgb"
VOCAB_FILE = "vocab.txt"
REPORT_FILE = "report.csv"
MANIFEST_FILE = "manifest.json"
DECODE_BATCH = 64


class UsageError(Exception):
    """Bad arguments or missing paths (exit code 2)."""


DECODERS: dict[str, Callable[[SegmentScoreTable, SegmentScoreTable], Segmentation]] = {
    "sgb-a": sgb_a,
    "sgb-c": sgb_c,
    "fwd": lambda f, b: viterbi(f)[0],
    "bwd": lambda f, b: viterbi(b)[0].mirrored(),
}


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict
    checkpoint: str | None
    seed: int | None
    version: str = __version__
    started: str = ""
    finished: str = ""
    argv: list = dataclasses.field(default_factory=lambda: list(sys.argv))

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, ensure_ascii=False) + "\n",
                        encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _existing(path: str | None, what: str) -> Path:
    if path is None or not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


# train

def cmd_train(args) -> int:
    corpus_path = _existing(args.corpus, "corpus")
    overrides = {
        "t_max": args.t_max, "seed": args.seed, "epochs": args.epochs, "lr": args.lr,
        "batch_size": args.batch_size, "embed_dim": args.embed_dim, "hidden_dim": args.hidden_dim,
        "clip": args.clip, "zero_cell": args.zero_cell, "share_proj": args.share_proj,
    }
    if args.config:
        config = TrainConfig.from_file(_existing(args.config, "config file"), **overrides)
    else:
        config = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()

    chunks = read_chunks(corpus_path, args.setting)
    if not chunks:
        raise UsageError(f"corpus {corpus_path} contains no sentences")
    vocab = build_vocab(chunks, special=(args.setting == 4), unk=not args.no_unk)
    vocab.save(out / VOCAB_FILE)
    corpus = [vocab.encode(c) for c in chunks]
    logger.info("training on %d sentences, vocabulary %d", len(corpus), len(vocab))
    model, report = train(corpus, vocab, config, checkpoint_dir=out)
    save_checkpoint(model, out / MODEL_FILE)
    report.write_csv(out / REPORT_FILE)
    RunManifest(
        command="train",
        config={**config.to_dict(), "setting": args.setting, "unk": not args.no_unk},
        inputs={"corpus": str(corpus_path.resolve()), "config": args.config},
        checkpoint=str((out / MODEL_FILE).resolve()), seed=config.seed,
        started=started, finished=_now(),
    ).write(out / MANIFEST_FILE)
    print(f"trained {config.epochs} epochs; final loss {report.epoch_losses[-1]:.4f}; wrote {out}")
    return 0


# segment

def load_model(path: str) -> tuple[SegmentalLM, Vocab, dict]:
    """Load a model from a training output directory or a checkpoint file with ``vocab.txt`` beside it."""
    p = _existing(path, "model")
    ckpt = p / MODEL_FILE if p.is_dir() else p
    folder = ckpt.parent
    vocab = Vocab.load(_existing(str(folder / VOCAB_FILE), "vocabulary"))
    model = load_checkpoint(_existing(str(ckpt), "checkpoint"), vocab.eos_id)
    if model.vocab_size != len(vocab):
        raise CheckpointFormatError(f"{ckpt}: vocabulary size {model.vocab_size} != {len(vocab)} symbols in vocab file")
    manifest = folder / MANIFEST_FILE
    config = json.loads(manifest.read_text(encoding="utf-8"))["config"] if manifest.exists() else {}
    return model, vocab, config


def _delimiter_words(raw: Sequence[str]) -> list[str]:
    """Punctuation runs as output words: repeats of one mark (``……``) stay together."""
    words: list[str] = []
    for ch in raw:
        if words and words[-1][-1] == ch:
            words[-1] += ch
        else:
            words.append(ch)
    return words


def _line_pieces(pre: Preprocessor, line: str) -> list[tuple[bool, list[str], list[str]]]:
    """Split a line into ``(is_delimiter, symbols, raw)`` runs."""
    pieces: list[tuple[bool, list[str], list[str]]] = []
    for sym, span, is_delim in pre.tokens(line):
        if pieces and pieces[-1][0] == is_delim:
            pieces[-1][1].append(sym)
            pieces[-1][2].append(span)
        else:
            pieces.append((is_delim, [sym], [span]))
    return pieces


def segment_lines(model: SegmentalLM, vocab: Vocab, lines: Sequence[str], setting: int,
                  t_max: int, decoder: str = "sgb-a",
                  preprocessor: Preprocessor | None = None) -> list[str]:
    """Segment raw lines into space-separated words, preserving input order.

    Under settings 3 and 4 punctuation never reaches the model and is emitted
    as separate words; placeholder spans keep their original characters.
    """
    if decoder not in DECODERS:
        raise ValueError(f"unknown decoder {decoder!r}; expected one of {sorted(DECODERS)}")
    decode = DECODERS[decoder]
    pre = preprocessor or Preprocessor(setting)
    plans = [_line_pieces(pre, line) for line in lines]
    jobs = [(li, pi, [vocab.index(s) for s in piece[1]])
            for li, pieces in enumerate(plans) for pi, piece in enumerate(pieces) if not piece[0]]
    segs: dict[tuple[int, int], Segmentation] = {}
    order = sorted(range(len(jobs)), key=lambda j: len(jobs[j][2]))
    with torch.no_grad():
        for b in range(0, len(order), DECODE_BATCH):
            batch = [jobs[j] for j in order[b:b + DECODE_BATCH]]
            ids = [job[2] for job in batch]
            fwd = score_batch(model, ids, t_max, "fwd")
            bwd = score_batch(model, ids, t_max, "bwd")
            for row, (li, pi, seq) in enumerate(batch):
                segs[li, pi] = decode(to_table(fwd[row], len(seq)), to_table(bwd[row], len(seq)))
    out = []
    for li, pieces in enumerate(plans):
        words: list[str] = []
        for pi, (is_delim, _, raw) in enumerate(pieces):
            if is_delim:
                words += _delimiter_words(raw)
            else:
                words += ["".join(raw[a:b]) for a, b in segs[li, pi].spans]
        out.append(" ".join(words))
    return out


def cmd_segment(args) -> int:
    model, vocab, trained = load_model(args.model)
    input_path = _existing(args.input, "input")
    setting = args.setting or trained.get("setting", 1)
    t_max = args.t_max or trained.get("t_max", 3)
    started = _now()
    lines = read_lines(input_path)
    segmented = segment_lines(model, vocab, lines, setting, t_max, args.decoder)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(s + "\n" for s in segmented), encoding="utf-8")
    RunManifest(
        command="segment",
        config={"decoder": args.decoder, "setting": setting, "t_max": t_max},
        inputs={"input": str(input_path.resolve()), "model": str(Path(args.model).resolve())},
        checkpoint=str(Path(args.model).resolve()), seed=trained.get("seed"),
        started=started, finished=_now(),
    ).write(out.with_name(out.name + ".manifest.json"))
    print(f"segmented {len(lines)} lines with {args.decoder}; wrote {out}")
    return 0


# eval / analyze / stats

def read_segmented(path: Path) -> tuple[list[str], list[Segmentation]]:
    texts, segs = [], []
    for line in read_lines(path):
        chars, seg = Segmentation.from_text(line)
        texts.append(chars)
        segs.append(seg)
    return texts, segs


def _paired(gold_path: str, pred_path: str):
    gold_texts, gold = read_segmented(_existing(gold_path, "gold file"))
    pred_texts, pred = read_segmented(_existing(pred_path, "prediction file"))
    if len(gold) != len(pred):
        raise ContractError(f"gold has {len(gold)} sentences, prediction has {len(pred)}")
    for i, (g, p) in enumerate(zip(gold_texts, pred_texts)):
        if g != p:
            raise ContractError(f"sentence {i}: characters differ between gold and prediction")
    return gold_texts, gold, pred


def _report_dir(args, command: str, inputs: dict, started: str) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    RunManifest(command=command, config={}, inputs=inputs, checkpoint=None, seed=None,
                started=started, finished=_now()).write(out / MANIFEST_FILE)
    return out


def cmd_eval(args) -> int:
    started = _now()
    _, gold, pred = _paired(args.gold, args.pred)
    report = word_f1(gold, pred)
    print(report.text())
    out = _report_dir(args, "eval", {"gold": args.gold, "pred": args.pred}, started)
    if out:
        report.write_csv(out / "eval.csv")
        (out / "eval.txt").write_text(report.text() + "\n", encoding="utf-8")
    return 0


def cmd_analyze(args) -> int:
    started = _now()
    texts, gold, pred = _paired(args.gold, args.pred)
    lexicon = gold_lexicon(read_lines(args.gold))
    report = ambiguity_analysis(gold, pred, lexicon, texts)
    print(report.text())
    out = _report_dir(args, "analyze", {"gold": args.gold, "pred": args.pred}, started)
    if out:
        report.write_csv(out / "ambiguity.csv")
        report.write_jsonl(out / "cases.jsonl")
        (out / "ambiguity.txt").write_text(report.text() + "\n", encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    started = _now()
    stats = corpus_stats(_existing(args.gold, "gold file"))
    fields = dataclasses.asdict(stats)
    for k, v in fields.items():
        print(f"{k}: {v}")
    out = _report_dir(args, "stats", {"gold": args.gold}, started)
    if out:
        (out / "stats.csv").write_text(",".join(fields) + "\n" + ",".join(map(str, fields.values())) + "\n",
                                       encoding="utf-8")
    return 0


# full-scale reproduction harness

# published F1 (%) keyed by (setting, decoder, T) then corpus
REFERENCE_F1 = {
    (1, "sgb-a", 3): {"cityu": 78.7, "msr": 79.4, "pku": 78.4, "as": 79.4},
    (1, "sgb-c", 3): {"cityu": 77.4, "msr": 80.2, "pku": 79.6, "as": 78.6},
    (1, "sgb-a", 4): {"cityu": 79.2, "msr": 80.5, "pku": 77.9, "as": 80.2},
    (1, "sgb-c", 4): {"cityu": 80.0, "msr": 74.0, "pku": 80.0, "as": 81.0},
    (1, "sgb-a", 5): {"cityu": 72.5, "msr": 72.8, "pku": 75.4, "as": 64.5},
    (1, "sgb-c", 5): {"cityu": 78.5, "msr": 80.4, "pku": 78.4, "as": 82.4},
    (3, "sgb-a", 3): {"cityu": 79.5, "msr": 80.6, "pku": 80.4, "as": 81.9},
    (3, "sgb-c", 3): {"cityu": 77.6, "msr": 81.1, "pku": 80.4, "as": 79.7},
    (3, "sgb-a", 4): {"cityu": 80.3, "msr": 80.6, "pku": 80.3, "as": 82.7},
    (3, "sgb-c", 4): {"cityu": 80.5, "msr": 81.7, "pku": 81.0, "as": 82.3},
    (3, "sgb-a", 5): {"cityu": 78.3, "msr": 80.1, "pku": 79.1, "as": 82.8},
    (3, "sgb-c", 5): {"cityu": 80.2, "msr": 82.3, "pku": 81.2, "as": 83.5},
    (4, "sgb-a", 3): {"cityu": 79.5, "msr": 82.7, "pku": 80.9, "as": 81.7},
    (4, "sgb-c", 3): {"cityu": 80.7, "msr": 83.1, "pku": 81.6, "as": 82.0},
    (4, "sgb-a", 4): {"cityu": 80.5, "msr": 81.7, "pku": 79.4, "as": 83.0},
    (4, "sgb-c", 4): {"cityu": 81.2, "msr": 83.6, "pku": 81.5, "as": 83.9},
    (4, "sgb-a", 5): {"cityu": 78.7, "msr": 82.6, "pku": 79.9, "as": 82.3},
    (4, "sgb-c", 5): {"cityu": 79.8, "msr": 83.7, "pku": 80.8, "as": 83.8},
}
CORPUS_BATCH = {"cityu": 32, "msr": 64, "pku": 16, "as": 256}


def _find(data_dir: Path, name: str, kind: str) -> Path:
    hits = sorted(data_dir.rglob(f"{name}_{kind}*.utf8")) or sorted(data_dir.rglob(f"{name}_{kind}*"))
    if not hits:
        raise UsageError(f"no {name}_{kind} file under {data_dir}")
    return hits[0]


def cmd_repro(args) -> int:
    if not args.full_repro:
        raise UsageError("the reproduction harness trains 300-dim models on the full corpora; "
                         "pass --full-repro to confirm")
    data_dir = _existing(args.data_dir, "data directory")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    rows = []
    for name in args.corpora:
        train_path, gold_path = _find(data_dir, name, "training"), _find(data_dir, name, "test_gold")
        gold_lines = read_lines(gold_path)
        _, gold = read_segmented(gold_path)
        for setting in args.settings:
            # training data is train + test text, evaluation on test only
            chunks = read_chunks(train_path, setting) + read_chunks(gold_path, setting)
            vocab = build_vocab(chunks, special=(setting == 4))
            for t_max in args.t_values:
                config = TrainConfig(t_max=t_max, epochs=args.epochs or 10, seed=args.seed or 0,
                                     batch_size=args.batch_size or CORPUS_BATCH.get(name, 32),
                                     embed_dim=args.embed_dim or 300, hidden_dim=args.hidden_dim or 300)
                run_dir = out / f"{name}-s{setting}-t{t_max}"
                run_dir.mkdir(exist_ok=True)
                vocab.save(run_dir / VOCAB_FILE)
                model, report = train([vocab.encode(c) for c in chunks], vocab, config, checkpoint_dir=run_dir)
                report.write_csv(run_dir / REPORT_FILE)
                for decoder in ("sgb-a", "sgb-c"):
                    pred_lines = segment_lines(model, vocab, ["".join(g.split()) for g in gold_lines],
                                               setting, t_max, decoder)
                    pred = [Segmentation.from_text(p)[1] for p in pred_lines]
                    f1 = word_f1(gold, pred).f1
                    ref = REFERENCE_F1.get((setting, decoder, t_max), {}).get(name)
                    rows.append((name, setting, t_max, decoder, f"{100 * f1:.1f}", "" if ref is None else ref))
                    print(f"{name} setting {setting} T={t_max} {decoder}: F1 {100 * f1:.1f} (reference {ref})")
    with open(out / "repro.csv", "w", encoding="utf-8") as fh:
        fh.write("corpus,setting,t_max,decoder,f1,reference_f1\n")
        fh.writelines(",".join(map(str, r)) + "\n" for r in rows)
    RunManifest(command="repro", config={"settings": args.settings, "t_values": args.t_values,
                                         "corpora": args.corpora, "epochs": args.epochs},
                inputs={"data_dir": str(data_dir.resolve())}, checkpoint=None, seed=args.seed,
                started=started, finished=_now()).write(out / MANIFEST_FILE)
    return 0


# argument parsing

def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biseg", description="Unsupervised word segmentation with bi-directional segmental language models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on raw text")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value configuration file; flags override it")
    p.add_argument("--setting", type=int, choices=SETTINGS, default=1)
    p.add_argument("--t-max", type=int)
    _model_flags(p)
    p.add_argument("--clip", type=float, help="l2 gradient clipping threshold (e.g. 5.0)")
    p.add_argument("--zero-cell", action="store_const", const=True, default=None,
                   help="start each segment's LM from the context hidden state with a zero cell")
    p.add_argument("--share-proj", action="store_const", const=True, default=None,
                   help="share the output projection between directions")
    p.add_argument("--no-unk", action="store_true", help="do not reserve an unknown-character row")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment raw text with a trained model")
    p.add_argument("input")
    p.add_argument("--model", required=True, help="training output directory or model.sgb")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--decoder", choices=sorted(DECODERS), default="sgb-a")
    p.add_argument("--setting", type=int, choices=SETTINGS, help="defaults to the training setting")
    p.add_argument("--t-max", type=int, help="defaults to the training value")
    p.set_defaults(func=cmd_segment)

    for name, func, text in (("eval", cmd_eval, "word precision, recall and F1"),
                             ("analyze", cmd_analyze, "combination and overlap error analysis")):
        p = sub.add_parser(name, help=text)
        p.add_argument("gold")
        p.add_argument("pred")
        p.add_argument("--out", help="directory for CSV and text reports")
        p.set_defaults(func=func)

    p = sub.add_parser("stats", help="word and character counts of a segmented file")
    p.add_argument("gold")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("repro", help="full-corpus reproduction harness (slow)")
    p.add_argument("--full-repro", action="store_true", help="confirm the full-scale run")
    p.add_argument("--data-dir", required=True, help="directory holding <corpus>_training / <corpus>_test_gold files")
    p.add_argument("--out", required=True)
    p.add_argument("--corpora", nargs="+", default=list(CORPUS_BATCH))
    p.add_argument("--settings", type=int, nargs="+", choices=SETTINGS, default=list(SETTINGS))
    p.add_argument("--t-values", type=int, nargs="+", default=[3, 4, 5])
    _model_flags(p)
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, IsADirectoryError) as err:
        print(f"biseg: error: {err}", file=sys.stderr)
        return 2
    except (CheckpointFormatError, ContractError, TrainingDiverged, FloatingPointError,
            ValueError, KeyError, OSError, RuntimeError) as err:
        print(f"biseg: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
