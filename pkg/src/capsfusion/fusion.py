"""Metadata branch and the single-neuron fusion head."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .ndtensor import DimensionError, Tensor, add, as_tensor, clip, log, matmul, mean, mul, relu, sigmoid, sub, transpose

N_FEATURES = 7
POSITIVE = 1
NEGATIVE = 0
PROB_CLAMP = 1e-12


class FusionParams(NamedTuple):
    feat_W: Tensor  # (H_f, 7)
    feat_b: Tensor  # (H_f,)
    head_text: Tensor  # (1, N_out * d_out)
    head_feat: Tensor  # (1, H_f)
    head_bias: Tensor  # (1,)


def encode_features(f, params: FusionParams) -> Tensor:
    """One IndRNN step from a zero state: relu(W_f f + b_f).

    With a zero previous state the recurrent term vanishes, so this is a
    dense layer. ``f`` is (7,) or (batch, 7).
    """
    f = as_tensor(f)
    if f.shape[-1] != N_FEATURES:
        raise DimensionError(f"feature vector must have {N_FEATURES} entries, got shape {f.shape}")
    x = f if f.ndim == 2 else f.reshape((1, N_FEATURES))
    h = relu(add(matmul(x, transpose(params.feat_W)), params.feat_b))
    return h if f.ndim == 2 else h.reshape((params.feat_W.shape[0],))


def fuse_logit(text_latent, feat_latent, params: FusionParams) -> Tensor:
    """W_text . text + W_feat . feat + bias, one logit per row.

    Latents are (batch, d) or (d,); the result is (batch,) or a 1-element tensor.
    """
    text_latent, feat_latent = as_tensor(text_latent), as_tensor(feat_latent)
    if text_latent.shape[-1] != params.head_text.shape[1] or feat_latent.shape[-1] != params.head_feat.shape[1]:
        raise DimensionError(
            f"fuse_logit: latents {text_latent.shape}, {feat_latent.shape} vs heads "
            f"{params.head_text.shape}, {params.head_feat.shape}"
        )
    single = text_latent.ndim == 1
    t = text_latent.reshape((1, -1)) if single else text_latent
    f = feat_latent.reshape((1, -1)) if single else feat_latent
    z = add(add(matmul(t, transpose(params.head_text)), matmul(f, transpose(params.head_feat))), params.head_bias)
    return z.reshape((1,) if single else (z.shape[0],))


def classify(logit: float) -> tuple[float, int]:
    """Probability and label; P = 0.5 counts as positive."""
    p = 1.0 / (1.0 + math.exp(-logit)) if logit >= 0 else math.exp(logit) / (1.0 + math.exp(logit))
    return p, POSITIVE if p >= 0.5 else NEGATIVE


def labels_from_probs(p: np.ndarray) -> np.ndarray:
    return (np.asarray(p) >= 0.5).astype(np.int64)


def bce_loss(P, y) -> Tensor:
    """Mean binary cross-entropy with P clamped to [1e-12, 1 - 1e-12]."""
    P = clip(as_tensor(P), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    terms = add(mul(log(P), y), mul(log(sub(1.0, P)), 1.0 - y))
    return mul(mean(terms), -1.0)


def bce_from_logits(logits, y) -> Tensor:
    return bce_loss(sigmoid(logits), y)


def init_fusion(rng: np.random.Generator, text_dim: int, H_f: int) -> dict[str, np.ndarray]:
    limit_f = np.sqrt(6.0 / (N_FEATURES + H_f))
    return {
        "feat_W": rng.uniform(-limit_f, limit_f, size=(H_f, N_FEATURES)),
        "feat_b": rng.uniform(0.0, 0.1, size=H_f),
        "head_text": rng.uniform(-1.0, 1.0, size=(1, text_dim)) / np.sqrt(text_dim),
        "head_feat": rng.uniform(-1.0, 1.0, size=(1, H_f)) / np.sqrt(H_f),
        "head_bias": np.zeros(1),
    }


def fusion_params(t: dict[str, Tensor]) -> FusionParams:
    return FusionParams(t["feat_W"], t["feat_b"], t["head_text"], t["head_feat"], t["head_bias"])
