"""Command-line entry point.

Exit codes: 0 ok, 1 I/O error, 2 invalid input/config/schema, 3 corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from .config import ConfigError, TrainConfig
from .encoder import pad_or_truncate
from .metrics import metrics_csv
from .pipeline import (
    COUNT_FIELDS,
    LABELS,
    CorpusError,
    FeatureStats,
    KeywordList,
    Lexicons,
    SynthSpec,
    TweetRecord,
    annotate,
    featurize,
    filter_corpus,
    load_corpus,
    make_examples,
    parse_record,
    split,
    synth_corpus,
    write_corpus,
)
from .fusion import labels_from_probs
from .trainer import TrainingError, default_grid, evaluate, loss_curve_csv, prepare, sweep, sweep_csv, train

logger = logging.getLogger("capsfusion")

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_CHECKPOINT = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write(path: str | Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if getattr(args, "config", None) else TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _labelled(path: str) -> list[TweetRecord]:
    """Load a corpus, annotating any record that carries no label."""
    records = load_corpus(path)
    keywords, lexicons = KeywordList.default(), Lexicons.default()
    return [r if r.label is not None else r.with_label(annotate(r, keywords, lexicons)) for r in records]


def cmd_prepare(args) -> int:
    keywords = KeywordList.load(args.keywords, "collection") if args.keywords else KeywordList.default("collection")
    stop = KeywordList.load(args.stop, "stop") if args.stop else KeywordList.default("stop")
    lexicons = Lexicons.default()
    errors: list = []
    records = load_corpus(args.corpus, errors)
    for lineno, msg in errors:
        print(f"{args.corpus}:{lineno}: skipped: {msg}", file=sys.stderr)
    kept, report = filter_corpus(records, keywords, stop)
    labelled = [r.with_label(annotate(r, keywords, lexicons)) for r in kept]
    stats = FeatureStats.fit(labelled)
    extra = [{"features": featurize(r, stats, lexicons.sentiment).tolist()} for r in labelled]
    write_corpus(labelled, args.out, extra)
    report_path = args.report or str(Path(args.out).with_suffix(".report.csv"))
    _write(report_path, report.to_csv())
    positives = sum(r.label == "positive" for r in labelled)
    print(f"kept {len(labelled)} of {len(records)} records ({positives} positive)", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    records = _labelled(args.data)
    try:
        data = prepare(records, cfg)
        model, curve = train(data.train, cfg, len(data.vocab))
    except (TrainingError, ValueError) as exc:
        raise CliError(f"training failed: {exc}", EXIT_INVALID) from exc
    checkpoint.save(checkpoint.Checkpoint(model, data.vocab, data.stats), args.out)
    _write(args.loss_csv or f"{args.out}.loss.csv", loss_curve_csv(curve))
    report = evaluate(model, data.test)
    print(f"final loss {curve[-1]:.6f}; held-out accuracy {report.accuracy:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = checkpoint.load(args.ckpt)
    records = _labelled(args.data)
    if args.split == "test":
        records = split(records, ckpt.config.train_ratio, ckpt.config.seed)[1]
    if not records:
        raise CliError("no records to evaluate", EXIT_INVALID)
    examples = make_examples(records, ckpt.vocab, ckpt.stats, ckpt.config.seq_len)
    sys.stdout.write(metrics_csv({"capsfusion": evaluate(ckpt.model, examples)}))
    return EXIT_OK


def _feature_vector(args, ckpt: checkpoint.Checkpoint) -> np.ndarray:
    if args.no_features:
        return np.zeros(7)
    if args.features is None:
        raise CliError("predict needs --features JSON or --no-features", EXIT_INVALID)
    try:
        obj = json.loads(args.features)
        missing = [k for k in ("sentiment", "polarity", "subjectivity") + COUNT_FIELDS if k not in obj]
        if missing:
            raise ValueError(f"missing feature fields: {', '.join(missing)}")
        rec = parse_record({"id": "cli", "text": args.text, **{k: obj[k] for k in obj}})
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise CliError(f"invalid --features: {exc}", EXIT_INVALID) from exc
    return featurize(rec, ckpt.stats)


def cmd_predict(args) -> int:
    ckpt = checkpoint.load(args.ckpt)
    feats = _feature_vector(args, ckpt)
    ids = pad_or_truncate(ckpt.vocab.encode(args.text), ckpt.config.seq_len)
    p = float(ckpt.model.predict_proba([ids], [feats])[0])
    label = LABELS[int(labels_from_probs(p))]
    print(f"{p:.6f},{label}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        grid = default_grid(args.grid)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    cfg = _config(args)
    data = prepare(_labelled(args.data), cfg)
    _write(args.out, sweep_csv(sweep(grid, data, cfg)))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(n_records=args.n, signal=args.signal, plant_rate=args.plant_rate)
    try:
        records = synth_corpus(spec, args.seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    write_corpus(records, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capsfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter, annotate and featurize a raw corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--keywords")
    p.add_argument("--stop")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="filter report CSV (default: OUT with .report.csv suffix)")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print the metrics CSV for a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("all", "test"), default="all")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one text")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--text", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--features", help="JSON object with the 7 raw metadata fields")
    group.add_argument("--no-features", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="dropout or batch-size sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic labelled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--signal", default="text")
    p.add_argument("--plant-rate", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except checkpoint.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ConfigError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
