"""Per-timepoint self-attention producing directed, row-stochastic graphs.

Convention used everywhere: ``W[i, j]`` is the attention that receiver ``i``
pays to sender ``j``, i.e. the weight of the edge ``j -> i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .encoder import glorot
from .errors import DimensionError

DIRECTION_NOTE = "row i = receiver, column j = sender; W[i][j] weights the edge j -> i"


@dataclass
class AttentionParams:
    """Key, value and query projections ``(2d_h, d_a)`` shared over time and samples."""

    key: Tensor
    value: Tensor
    query: Tensor
    scaled: bool = False

    @classmethod
    def init(cls, rng: np.random.Generator, dim_in: int, dim_att: int = 64,
             scaled: bool = False) -> "AttentionParams":
        def make(name):
            return Tensor(glorot(rng, dim_in, dim_att, (dim_in, dim_att)),
                          requires_grad=True, name=f"attention.{name}")
        return cls(make("W_k"), make("W_v"), make("W_q"), scaled)

    def parameters(self) -> list[Tensor]:
        return [self.key, self.value, self.query]


def attend(p: AttentionParams, h) -> tuple[Tensor, Tensor]:
    """Self-attention over the ``n`` rows of ``h`` (``(..., n, 2d_h)``).

    Returns the adjacency ``W`` of shape ``(..., n, n)`` whose row ``i`` is
    ``softmax(q_i K)`` and the updated embeddings ``sum_j W[i, j] v_j``.
    Scores are not divided by ``sqrt(d_a)`` unless ``p.scaled`` is set.
    """
    h = dc._as_tensor(h)
    if h.ndim < 2 or h.shape[-2] < 1:
        raise DimensionError(f"attend needs at least one component, got {h.shape}")
    if h.shape[-1] != p.key.shape[0]:
        raise DimensionError(f"embedding width {h.shape[-1]} != projection input {p.key.shape[0]}")
    return _graph(p, *_project(p, h))


def _project(p: AttentionParams, h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    return h @ p.key, h @ p.value, h @ p.query


def _graph(p: AttentionParams, k: Tensor, v: Tensor, q: Tensor) -> tuple[Tensor, Tensor]:
    scores = q @ k.T
    if p.scaled:
        scores = scores * (1.0 / np.sqrt(p.key.shape[1]))
    W = dc.softmax_rows(scores)
    return W, W @ v


def attend_sequence(p: AttentionParams, embeddings) -> tuple[Tensor, Tensor]:
    """Apply :func:`attend` at every timepoint.

    ``embeddings`` is ``(n, T, 2d_h)`` or ``(B, n, T, 2d_h)``; the graphs come
    back time-major as ``(T, n, n)`` or ``(B, T, n, n)``.
    """
    emb = dc._as_tensor(embeddings)
    if emb.ndim < 3:
        raise DimensionError(f"expected (..., n, T, d) embeddings, got {emb.shape}")
    if emb.shape[-1] != p.key.shape[0]:
        raise DimensionError(f"embedding width {emb.shape[-1]} != projection input {p.key.shape[0]}")
    # project before going time-major, while the embeddings are still contiguous
    k, v, q = (dc.swapaxes(x, -3, -2) for x in _project(p, emb))
    return _graph(p, k, v, q)


@dataclass
class DynamicGraph:
    """One graph per timepoint for one sample, ``graphs[t]`` is ``(n, n)``."""

    graphs: np.ndarray

    @property
    def T(self) -> int:
        return self.graphs.shape[0]

    @property
    def n(self) -> int:
        return self.graphs.shape[1]

    def max_row_error(self) -> float:
        return float(np.abs(self.graphs.sum(axis=-1) - 1.0).max())
