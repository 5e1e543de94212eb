"""Bag-of-words logistic regression, the linear reference point."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoder import tokenize
from .metrics import MetricsReport
from .pipeline import LABELS, TweetRecord


@dataclass
class BowModel:
    vocab: dict[str, int]
    weights: np.ndarray
    bias: float

    def vectorize(self, texts: Sequence[str]) -> np.ndarray:
        return term_frequencies(texts, self.vocab)

    def predict(self, texts: Sequence[str]) -> np.ndarray:
        z = self.vectorize(texts) @ self.weights + self.bias
        return (z >= 0).astype(np.int64)


def build_vocab(texts: Sequence[str]) -> dict[str, int]:
    vocab: dict[str, int] = {}
    for text in texts:
        for tok in tokenize(text):
            vocab.setdefault(tok, len(vocab))
    return vocab


def term_frequencies(texts: Sequence[str], vocab: dict[str, int]) -> np.ndarray:
    X = np.zeros((len(texts), len(vocab)))
    for row, text in enumerate(texts):
        for tok in tokenize(text):
            col = vocab.get(tok)
            if col is not None:
                X[row, col] += 1.0
    return X


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    lr: float = 0.5,
    iterations: int = 500,
    l2: float = 1e-4,
    seed: int = 42,
) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on mean log-loss with a small L2 penalty."""
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iterations):
        z = np.clip(X @ w + b, -500, 500)
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - y
        w -= lr * (X.T @ err / n + l2 * w)
        b -= lr * err.mean()
    return w, b


def _labels(records: Sequence[TweetRecord]) -> np.ndarray:
    if any(r.label is None for r in records):
        raise ValueError("baseline needs labelled records")
    return np.array([LABELS.index(r.label) for r in records], dtype=np.float64)


def train_bow(records: Sequence[TweetRecord], seed: int = 42, **kwargs) -> BowModel:
    if not records:
        raise ValueError("training set is empty")
    texts = [r.text for r in records]
    vocab = build_vocab(texts)
    if not vocab:
        raise ValueError("empty vocabulary")
    w, b = fit_logistic(term_frequencies(texts, vocab), _labels(records), seed=seed, **kwargs)
    return BowModel(vocab, w, b)


def bow_baseline(
    train_set: Sequence[TweetRecord], test_set: Sequence[TweetRecord], seed: int = 42, **kwargs
) -> MetricsReport:
    if not test_set:
        raise ValueError("test set is empty")
    model = train_bow(train_set, seed=seed, **kwargs)
    return MetricsReport.from_labels(_labels(test_set).astype(np.int64), model.predict([r.text for r in test_set]))
