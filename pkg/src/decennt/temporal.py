"""Global temporal attention: weigh each timepoint's graph and pool them into one."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import BatchNormState, Tensor
from .encoder import glorot
from .errors import ConfigurationError, InputError, ParameterError

ALPHA_MODES = ("softmax", "relu-raw", "mean")


def hidden_width(n: int, gamma: float) -> int:
    """MLP width ``max(1, round(gamma * n**2))``."""
    if gamma <= 0:
        raise ConfigurationError(f"gamma must be positive, got {gamma}")
    return max(1, int(round(gamma * n * n)))


@dataclass
class GtaParams:
    w1: Tensor
    bn_scale: Tensor
    bn_shift: Tensor
    bn_state: BatchNormState
    w2: Tensor
    gamma: float

    @classmethod
    def init(cls, rng: np.random.Generator, n: int, gamma: float = 0.25) -> "GtaParams":
        m = hidden_width(n, gamma)
        return cls(
            w1=Tensor(glorot(rng, n * n, m, (n * n, m)), requires_grad=True, name="gta.W_l1"),
            bn_scale=Tensor(np.ones(m), requires_grad=True, name="gta.bn.scale"),
            bn_shift=Tensor(np.zeros(m), requires_grad=True, name="gta.bn.shift"),
            bn_state=BatchNormState(m),
            w2=Tensor(glorot(rng, m, 1, (m, 1)), requires_grad=True, name="gta.W_l2"),
            gamma=gamma,
        )

    @property
    def width(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.bn_scale, self.bn_shift, self.w2]


@dataclass
class TemporalAttention:
    """Raw scores, attention weights and pooled graph (Tensors, possibly batched)."""

    scores: Tensor
    alpha: Tensor
    final: Tensor
    mode: str


def normalize_scores(scores: Tensor, mode: str) -> Tensor:
    if mode == "softmax":
        return dc.softmax(scores, axis=-1)
    if mode == "relu-raw":
        return dc.relu(scores)
    if mode == "mean":
        T = scores.shape[-1]
        return dc.Tensor(np.full(scores.shape, 1.0 / T))
    raise ConfigurationError(f"unknown alpha mode {mode!r}; expected one of {ALPHA_MODES}")


def aggregate(p: GtaParams, graphs, mode: str = "softmax", training: bool = False) -> TemporalAttention:
    """Score every ``W_t`` against the summed graph and pool.

    ``graphs`` is ``(T, n, n)`` or ``(B, T, n, n)``.  Batch normalization
    treats every (sample, timepoint) pair as one instance.
    """
    W = dc._as_tensor(graphs)
    if W.ndim not in (3, 4):
        raise InputError(f"expected (T, n, n) or (B, T, n, n) graphs, got {W.shape}")
    single = W.ndim == 3
    if single:
        W = W.reshape((1,) + W.shape)
    B, T, n, _ = W.shape
    if T == 0:
        raise InputError("temporal attention needs at least one timepoint")
    if n * n != p.w1.shape[0]:
        raise ConfigurationError(f"GTA built for {p.w1.shape[0]} edges, got graphs with n={n}")
    W_global = W.sum(axis=1, keepdims=True)
    similarity = W * W_global
    hidden = dc.flatten(similarity, 2) @ p.w1
    hidden = dc.batchnorm(hidden.reshape(B * T, p.width), p.bn_scale, p.bn_shift,
                          p.bn_state, training)
    scores = (dc.relu(hidden) @ p.w2).reshape(B, T)
    alpha = normalize_scores(scores, mode)
    final = (W * alpha.reshape(B, T, 1, 1)).sum(axis=1)
    if single:
        scores, alpha, final = scores.reshape(T), alpha.reshape(T), final.reshape(n, n)
    return TemporalAttention(scores, alpha, final, mode)


def attention_threshold(alpha: np.ndarray, scores: np.ndarray | None = None,
                        mode: str = "softmax") -> np.ndarray:
    """Boolean mask of attended timepoints (last axis is time).

    Softmax weights count as attended when above the uniform level ``1/T``;
    in ``relu-raw`` mode a timepoint is attended when its raw score is positive.
    """
    alpha = np.asarray(alpha, dtype=float)
    if mode == "relu-raw":
        ref = alpha if scores is None else np.asarray(scores, dtype=float)
        return ref > 0
    T = alpha.shape[-1]
    return alpha > 1.0 / T


def top_count(fraction: float, total: int) -> int:
    """``ceil(fraction * total)`` with float noise removed."""
    if not 0 < fraction <= 1:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    return int(math.ceil(round(fraction * total, 9)))


def top_fraction_timepoints(alpha: np.ndarray, fraction: float, side: str = "top") -> np.ndarray:
    """Indices of the ``ceil(fraction*T)`` largest (or smallest) weights.

    Ties go to the smaller index; the result is sorted ascending.
    """
    alpha = np.asarray(alpha, dtype=float)
    k = top_count(fraction, alpha.shape[-1])
    if side == "top":
        order = np.argsort(-alpha, kind="stable")
    elif side == "bottom":
        order = np.argsort(alpha, kind="stable")
    else:
        raise ParameterError(f"side must be 'top' or 'bottom', got {side!r}")
    return np.sort(order[:k])
