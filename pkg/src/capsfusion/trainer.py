"""Training loop, evaluation and hyperparameter sweeps."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import TrainConfig
from .encoder import Vocabulary
from .fusion import labels_from_probs
from .metrics import MetricsReport
from .model import CapsFusion
from .ndtensor import Record, backward
from .optim import AdamState, adam_step
from .pipeline import AnnotatedExample, FeatureStats, TweetRecord, as_arrays, make_examples, split

logger = logging.getLogger(__name__)

DROPOUT_GRID = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
BATCH_GRID = (2, 4, 6, 8, 16, 32, 64, 128, 512, 1024)
SWEEP_HEADER = ["dropout", "batch_size", "accuracy", "precision", "recall", "f1"]


class TrainingError(RuntimeError):
    pass


@dataclass
class PreparedData:
    vocab: Vocabulary
    stats: FeatureStats
    train: list[AnnotatedExample]
    test: list[AnnotatedExample]


def prepare(records: Sequence[TweetRecord], config: TrainConfig, lexicon=None) -> PreparedData:
    """Stratified split, then vocabulary and count statistics fitted on the train side only."""
    train_recs, test_recs = split(records, config.train_ratio, config.seed)
    vocab = Vocabulary.build(r.text for r in train_recs)
    stats = FeatureStats.fit(train_recs)
    n = config.seq_len
    return PreparedData(
        vocab,
        stats,
        make_examples(train_recs, vocab, stats, n, lexicon),
        make_examples(test_recs, vocab, stats, n, lexicon),
    )


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(shuffle), np.random.default_rng(drop)


def train(
    examples: Sequence[AnnotatedExample],
    config: TrainConfig,
    vocab_size: int,
    model: Optional[CapsFusion] = None,
) -> tuple[CapsFusion, list[float]]:
    """Mini-batch Adam on mean binary cross-entropy.

    Returns the trained model and the per-epoch mean loss. Shuffling, dropout
    masks and initialization all derive from ``config.seed``.
    """
    if not examples:
        raise TrainingError("training set is empty")
    ids, feats, labels = as_arrays(examples)
    if ids.shape[1] != config.seq_len:
        raise TrainingError(f"examples have length {ids.shape[1]}, config expects {config.seq_len}")
    init_rng, shuffle_rng, drop_rng = _streams(config.seed)
    if model is None:
        model = CapsFusion.initialize(config, vocab_size, init_rng)
    frozen = model.frozen
    state = AdamState()
    curve = []
    n = len(ids)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            rec = Record()
            t = model.tensors(rec)
            loss = model.loss(t, ids[idx], feats[idx], labels[idx], config.dropout, drop_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch + 1}, batch starting {start}")
            grads = backward(rec, loss)
            step_grads = {k: grads[v.node_id] for k, v in t.items() if k not in frozen}
            adam_step(model.arrays, step_grads, state, config.learning_rate)
            model.after_step()
            total += value * len(idx)
        curve.append(total / n)
        logger.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, curve[-1])
    return model, curve


def evaluate(model: CapsFusion, examples: Sequence[AnnotatedExample]) -> MetricsReport:
    if not examples:
        raise ValueError("evaluation set is empty")
    ids, feats, labels = as_arrays(examples)
    return MetricsReport.from_labels(labels, labels_from_probs(model.predict_proba(ids, feats)))


def sweep(
    grid: Sequence[dict],
    data: PreparedData,
    config: TrainConfig,
) -> list[list[float]]:
    """Train and evaluate once per grid point on a shared split and seed.

    Each grid entry overrides ``dropout`` and/or ``batch_size``. A point whose
    training fails yields a row of NaN scores.
    """
    if not grid:
        raise ValueError("sweep grid is empty")
    rows = []
    for point in grid:
        cfg = config.replace(**point)
        try:
            model, _ = train(data.train, cfg, len(data.vocab))
            report = evaluate(model, data.test)
            pos = report.positive
            scores = [report.accuracy, pos.precision, pos.recall, pos.f1]
        except (TrainingError, FloatingPointError) as exc:
            logger.warning("sweep point %s failed: %s", point, exc)
            scores = [math.nan] * 4
        rows.append([cfg.dropout, cfg.batch_size] + scores)
    return rows


def default_grid(axis: str) -> list[dict]:
    if axis == "dropout":
        return [{"dropout": d} for d in DROPOUT_GRID]
    if axis == "batch":
        return [{"batch_size": b} for b in BATCH_GRID]
    raise ValueError(f"unknown sweep grid {axis!r}; expected 'dropout' or 'batch'")


def sweep_csv(rows: Sequence[Sequence[float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for dropout, batch, *scores in rows:
        writer.writerow([f"{dropout:g}", int(batch)] + [f"{s:.6f}" for s in scores])
    return buf.getvalue()


def loss_curve_csv(curve: Sequence[float]) -> str:
    return "epoch,loss\n" + "".join(f"{i},{v:.10f}\n" for i, v in enumerate(curve, start=1))
