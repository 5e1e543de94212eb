"""Token ids to per-timestep hidden states: embedding lookup plus a
bidirectional IndRNN (each hidden unit recurs only on itself)."""

from __future__ import annotations

import unicodedata
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .ndtensor import DimensionError, Tensor, add, concat, matmul, mul, relu, stack, take_rows, transpose

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


def normalize_text(text: str) -> str:
    """NFC, case-folded, whitespace collapsed to single spaces."""
    return " ".join(unicodedata.normalize("NFC", text).casefold().split())


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization after deleting Unicode punctuation."""
    text = normalize_text(text)
    stripped = "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))
    return stripped.split()


class Vocabulary:
    """Dense token -> id map with ids 0 (PAD) and 1 (UNK) reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self._stoi: dict[str, int] = {}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self._stoi:
            return self._stoi[token]
        self._stoi[token] = len(self._itos)
        self._itos.append(token)
        return self._stoi[token]

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocabulary":
        """Vocabulary over tokenized ``texts`` in first-occurrence order."""
        counts: dict[str, int] = {}
        for text in texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        return cls(t for t, c in counts.items() if c >= min_count)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    def encode(self, text: str) -> list[int]:
        return [self.id(t) for t in tokenize(text)]

    @property
    def tokens(self) -> list[str]:
        """Corpus tokens in id order, excluding the reserved entries."""
        return self._itos[2:]

    def dumps(self) -> str:
        return "".join(t + "\n" for t in self.tokens)

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        return cls(line for line in text.split("\n") if line)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def pad_or_truncate(tokens: Sequence[int], n: int) -> list[int]:
    """Right-pad with PAD or keep the first ``n`` ids."""
    if n <= 0:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    tokens = list(tokens[:n])
    return tokens + [PAD] * (n - len(tokens))


class CellParams(NamedTuple):
    W: Tensor  # H x k input weights
    u: Tensor  # H recurrent weights (elementwise)
    b: Tensor  # H bias


class EncoderParams(NamedTuple):
    embedding: Tensor  # V x k, row PAD kept at zero by the optimizer
    forward: CellParams
    backward: CellParams


def embed(token_ids, embedding: Tensor) -> Tensor:
    """Rows of ``embedding`` for each id; accepts (n,) or (batch, n) ids."""
    ids = np.asarray(token_ids, dtype=np.int64)
    return take_rows(embedding, ids)


def indrnn_step(x_t, h_prev, cell: CellParams) -> Tensor:
    """h_t = relu(W x_t + u * h_prev + b) for x_t of shape (..., k)."""
    W, u, b = cell
    if x_t.shape[-1] != W.shape[1] or h_prev.shape[-1] != W.shape[0]:
        raise DimensionError(
            f"indrnn_step: x {x_t.shape}, h {h_prev.shape} do not fit W {W.shape}"
        )
    return relu(add(add(matmul(_as_row(x_t), transpose(W)).reshape(h_prev.shape), mul(u, h_prev)), b))


def _as_row(x):
    return x.reshape((-1, x.shape[-1])) if x.ndim != 2 else x


def _run(Z: Tensor, u: Tensor, order: Sequence[int]) -> list[Tensor]:
    # Z holds the input projection W x_t + b for every step
    states: list = [None] * Z.shape[-2]
    h = None
    for t in order:
        z_t = Z[..., t, :]
        h = relu(z_t if h is None else add(z_t, mul(u, h)))
        states[t] = h
    return states


def bi_indrnn(X: Tensor, params: EncoderParams) -> Tensor:
    """Forward and backward IndRNN over (..., n, k) inputs, concatenated per step.

    Initial states are zero. Backward states are stored at their original
    positions, so row t is [forward h_t, backward h_t] with shape (..., n, 2H).
    """
    n, k = X.shape[-2], X.shape[-1]
    outs = []
    for cell, order in ((params.forward, range(n)), (params.backward, range(n - 1, -1, -1))):
        if cell.W.shape[1] != k:
            raise DimensionError(f"bi_indrnn: input width {k} does not match W {cell.W.shape}")
        Z = add(matmul(X, transpose(cell.W)), cell.b)
        outs.append(stack(_run(Z, cell.u, order), axis=-2))
    return concat(outs, axis=-1)


def init_encoder(rng: np.random.Generator, vocab_size: int, k: int, H: int) -> dict[str, np.ndarray]:
    """Fresh encoder arrays. Embeddings uniform(-0.05, 0.05) with the PAD row zeroed."""
    emb = rng.uniform(-0.05, 0.05, size=(vocab_size, k))
    emb[PAD] = 0.0
    arrays = {"embedding": emb}
    limit = np.sqrt(6.0 / (k + H))
    for side in ("fwd", "bwd"):
        arrays[f"enc_{side}_W"] = rng.uniform(-limit, limit, size=(H, k))
        arrays[f"enc_{side}_u"] = rng.uniform(0.0, 1.0, size=H)
        arrays[f"enc_{side}_b"] = rng.uniform(0.0, 0.1, size=H)  # nonzero: PAD steps stay off the relu kink
    return arrays


def encoder_params(t: dict[str, Tensor]) -> EncoderParams:
    def cell(side: str) -> CellParams:
        return CellParams(t[f"enc_{side}_W"], t[f"enc_{side}_u"], t[f"enc_{side}_b"])

    return EncoderParams(t["embedding"], cell("fwd"), cell("bwd"))
