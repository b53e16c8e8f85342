"""Bidirectional LSTM applied to every component's scalar series with shared weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import DimensionError, InputError

GATES = ("i", "f", "g", "o")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class LstmParams:
    """Weights of one LSTM direction, stored per gate as in the cell equations.

    ``W_i<gate>`` has shape ``(d_h, d_in)``, ``W_h<gate>`` has shape
    ``(d_h, d_h)`` and every bias has length ``d_h``.
    """

    weights: dict[str, Tensor]
    hidden: int
    inputs: int = 1

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, inputs: int = 1, prefix: str = "") -> "LstmParams":
        w = {}
        for gate in GATES:
            w[f"W_i{gate}"] = glorot(rng, inputs, hidden, (hidden, inputs))
            w[f"W_h{gate}"] = glorot(rng, hidden, hidden, (hidden, hidden))
        for gate in GATES:
            w[f"b_i{gate}"] = np.zeros(hidden)
            w[f"b_h{gate}"] = np.zeros(hidden)
        return cls({k: Tensor(v, requires_grad=True, name=prefix + k) for k, v in w.items()},
                   hidden, inputs)

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    def fused(self) -> tuple[Tensor, Tensor, Tensor]:
        """Stack the per-gate weights as ``(d_in, 4d_h)``, ``(d_h, 4d_h)``, ``(4d_h,)``."""
        w = self.weights
        w_in = dc.concat([w[f"W_i{g}"] for g in GATES], axis=0).T
        w_hid = dc.concat([w[f"W_h{g}"] for g in GATES], axis=0).T
        bias = dc.concat([w[f"b_i{g}"] + w[f"b_h{g}"] for g in GATES], axis=0)
        return w_in, w_hid, bias


def lstm_cell_step(p: LstmParams, x_t, h_prev, c_prev) -> tuple[Tensor, Tensor]:
    """One LSTM step written gate by gate with diffcore primitives.

    ``x_t`` is ``(N, d_in)``, the states are ``(N, d_h)``.
    """
    x_t, h_prev, c_prev = dc._as_tensor(x_t), dc._as_tensor(h_prev), dc._as_tensor(c_prev)
    if x_t.ndim != 2 or x_t.shape[1] != p.inputs:
        raise DimensionError(f"x_t must be (N, {p.inputs}), got {x_t.shape}")
    if h_prev.shape != (x_t.shape[0], p.hidden) or c_prev.shape != h_prev.shape:
        raise DimensionError(f"states must be ({x_t.shape[0]}, {p.hidden})")
    w = p.weights

    def pre(gate):
        return (x_t @ w[f"W_i{gate}"].T + w[f"b_i{gate}"]
                + h_prev @ w[f"W_h{gate}"].T + w[f"b_h{gate}"])

    i = dc.sigmoid(pre("i"))
    f = dc.sigmoid(pre("f"))
    g = dc.tanh(pre("g"))
    o = dc.sigmoid(pre("o"))
    c = f * c_prev + i * g
    h = o * dc.tanh(c)
    return h, c


def lstm_scan(gate_inputs: Tensor, w_hid: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over precomputed input projections as a single tape entry.

    ``gate_inputs`` is ``(N, T, 4d_h)`` holding ``W_i x_t + b`` for the gate
    order i, f, g, o; ``w_hid`` is ``(d_h, 4d_h)``.  Initial states are zero.
    Returns hidden states ``(N, T, d_h)`` in the original time order.
    """
    N, T, G = gate_inputs.shape
    d = G // 4
    # time-major copies keep every per-step slice contiguous
    X = np.ascontiguousarray(np.swapaxes(gate_inputs.data, 0, 1))
    U = w_hid.data
    steps = range(T - 1, -1, -1) if reverse else range(T)
    # padded by one zero state so H[prev] is valid at the first step
    H = np.zeros((T + 1, N, d))
    C = np.zeros((T + 1, N, d))
    TC = np.empty((T, N, d))
    act = np.empty((T, N, G))
    h = H[-1]
    c = C[-1]
    for t in steps:
        a = act[t]
        np.matmul(h, U, out=a)
        a += X[t]
        # one tanh for all gates: sigmoid(z) = (tanh(z / 2) + 1) / 2
        sg = a[:, :2 * d], a[:, 3 * d:]
        for part in sg:
            part *= 0.5
        np.tanh(a, out=a)
        for part in sg:
            part *= 0.5
            part += 0.5
        c = C[t]
        np.multiply(a[:, d:2 * d], C[t + 1 if reverse else t - 1], out=c)
        c += a[:, :d] * a[:, 2 * d:3 * d]
        np.tanh(c, out=TC[t])
        h = H[t]
        np.multiply(a[:, 3 * d:], TC[t], out=h)

    def grad_fn(gH):
        gH = np.swapaxes(gH, 0, 1)
        dX = np.empty((T, N, G))
        dh_next = np.zeros((N, d))
        dc_next = np.zeros((N, d))
        order = range(T) if reverse else range(T - 1, -1, -1)
        shift = 1 if reverse else -1
        for t in order:
            c_prev = C[t + shift]
            a = act[t]
            i, f, g, o = a[:, :d], a[:, d:2 * d], a[:, 2 * d:3 * d], a[:, 3 * d:]
            tc = TC[t]
            dh = gH[t] + dh_next
            dct = dh * o * (1.0 - tc * tc) + dc_next
            dz = dX[t]
            dz[:, :d] = dct * g * i * (1.0 - i)
            dz[:, d:2 * d] = dct * c_prev * f * (1.0 - f)
            dz[:, 2 * d:3 * d] = dct * i * (1.0 - g * g)
            dz[:, 3 * d:] = dh * tc * o * (1.0 - o)
            dh_next = dz @ U.T
            dc_next = dct * f
        # previous hidden state of every step (zero state for the first one)
        if reverse:
            H_prev = H[1:]
        else:
            H_prev = np.concatenate([H[-1:], H[:T - 1]])
        dU = H_prev.reshape(-1, d).T @ dX.reshape(-1, G)
        return np.swapaxes(dX, 0, 1), dU

    H_out = np.swapaxes(H[:T], 0, 1)
    return dc.record(H_out, (gate_inputs, w_hid), grad_fn)


@dataclass
class BiLstmEncoder:
    """Forward and backward LSTM shared across all components."""

    fwd: LstmParams
    bwd: LstmParams

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int) -> "BiLstmEncoder":
        return cls(LstmParams.init(rng, hidden, prefix="encoder.fwd."),
                   LstmParams.init(rng, hidden, prefix="encoder.bwd."))

    @property
    def hidden(self) -> int:
        return self.fwd.hidden

    def parameters(self) -> list[Tensor]:
        return self.fwd.parameters() + self.bwd.parameters()


def _direction(p: LstmParams, seq: Tensor, reverse: bool) -> Tensor:
    w_in, w_hid, bias = p.fused()
    gate_inputs = seq @ w_in + bias
    return lstm_scan(gate_inputs, w_hid, reverse=reverse)


def bilstm_encode(enc: BiLstmEncoder, x) -> Tensor:
    """Embed every component of ``x`` independently.

    Parameters
    ----------
    enc : BiLstmEncoder
    x : array_like or Tensor
        ``(n, T)`` or batched ``(B, n, T)`` series.

    Returns
    -------
    Tensor
        ``(n, T, 2d_h)`` (or ``(B, n, T, 2d_h)``); the last axis is the
        forward state followed by the backward state.
    """
    x = dc._as_tensor(x)
    if x.ndim not in (2, 3) or 0 in x.shape:
        raise InputError(f"expected a non-empty (n, T) or (B, n, T) input, got {x.shape}")
    lead, T = x.shape[:-1], x.shape[-1]
    seq = x.reshape(-1, T, 1)
    h_f = _direction(enc.fwd, seq, reverse=False)
    h_b = _direction(enc.bwd, seq, reverse=True)
    h = dc.concat([h_f, h_b], axis=-1)
    return h.reshape(lead + (T, 2 * enc.hidden))
