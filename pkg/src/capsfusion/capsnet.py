"""Capsule layer: per-pair transformation matrices and routing-by-agreement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndtensor import DimensionError, Tensor, add, as_tensor, div, matmul, mul, norm, softmax_row, sum_


def squash(s, axis: int = -1) -> Tensor:
    """Shrink ``s`` to length |s|^2 / (1 + |s|^2) along ``axis``, keeping its direction.

    Written as s * |s| / (1 + |s|^2), which equals the usual
    (|s|^2 / (1 + |s|^2)) * s / |s| and is exactly 0 at s = 0.
    """
    s = as_tensor(s)
    n = norm(s, axis=axis, keepdims=True)
    return mul(s, div(n, add(mul(n, n), 1.0)))


@dataclass
class CapsuleLayerParams:
    W: Tensor  # (N_in, N_out, d_out, d_in)
    iterations: int = 3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"routing needs at least one iteration, got {self.iterations}")
        if self.W.ndim != 4:
            raise DimensionError(f"capsule W must be 4-D (N_in, N_out, d_out, d_in), got {self.W.shape}")

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[2]

    @property
    def d_in(self) -> int:
        return self.W.shape[3]


@dataclass
class RoutingState:
    b: Tensor  # (..., N_in, N_out) final coupling logits
    c: Tensor  # (..., N_in, N_out) final coupling coefficients
    v: Tensor  # (..., N_out, d_out) output capsules
    couplings: list[np.ndarray] = field(default_factory=list)  # c at each iteration


def predict_vectors(u, params: CapsuleLayerParams) -> Tensor:
    """u_hat[..., i, j, :] = W[i, j] @ u[..., i, :] for u of shape (..., N_in, d_in)."""
    u = as_tensor(u)
    n_in, n_out, d_out, d_in = params.W.shape
    if u.shape[-2:] != (n_in, d_in):
        raise DimensionError(f"predict_vectors: u {u.shape} does not fit W {params.W.shape}")
    lead = u.shape[:-2]
    W = params.W.reshape((n_in, n_out * d_out, d_in))
    col = u.reshape(lead + (n_in, d_in, 1))
    return matmul(W, col).reshape(lead + (n_in, n_out, d_out))


def route(u_hat, iterations: int = 3) -> RoutingState:
    """Dynamic routing over predictions of shape (..., N_in, N_out, d_out).

    Logits start at zero and are updated with the agreement u_hat . v after
    every iteration except the last. The loop is unrolled into the record, so
    gradients flow through all iterations.
    """
    if iterations < 1:
        raise ValueError(f"routing needs at least one iteration, got {iterations}")
    u_hat = as_tensor(u_hat)
    *lead, n_in, n_out, d_out = u_hat.shape
    b = Tensor(np.zeros(tuple(lead) + (n_in, n_out)))
    couplings = []
    for it in range(iterations):
        c = softmax_row(b)
        couplings.append(c.data)
        s = sum_(mul(c.reshape(c.shape + (1,)), u_hat), axis=-3)
        v = squash(s)
        if it < iterations - 1:
            agreement = sum_(mul(u_hat, v.reshape(tuple(lead) + (1, n_out, d_out))), axis=-1)
            b = add(b, agreement)
    return RoutingState(b, c, v, couplings)


def to_capsules(h, n_in: int, d_in: int) -> Tensor:
    """View (..., n, 2H) encoder states as (..., n_in, d_in) input capsules."""
    h = as_tensor(h)
    lead = h.shape[:-2]
    if h.shape[-2] * h.shape[-1] != n_in * d_in:
        raise DimensionError(
            f"encoder output {h.shape[-2:]} cannot be partitioned into {n_in} capsules of dim {d_in}"
        )
    return h.reshape(lead + (n_in, d_in))


def capsule_layer_forward(h, params: CapsuleLayerParams) -> Tensor:
    """Encoder states (..., n, 2H) -> output capsules (..., N_out, d_out)."""
    u = to_capsules(h, params.n_in, params.d_in)
    return route(predict_vectors(u, params), params.iterations).v


def init_capsules(rng: np.random.Generator, n_in: int, n_out: int, d_out: int, d_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(n_in * d_in)
    return rng.uniform(-limit, limit, size=(n_in, n_out, d_out, d_in))
