"""Minimal tape-based reverse-mode differentiation on top of numpy.

Every differentiable value is a :class:`Tensor` wrapping a float64 array.
Operations whose operands require gradients append an entry to the current
thread's :class:`ComputeTape`; :func:`backward` replays that tape in reverse,
accumulates gradients into leaf tensors and then clears it.  A tape can only
be replayed once, so calling :func:`backward` twice on the same loss fails.

Broadcasting follows numpy for the elementwise ops because biases and
per-timepoint weights need it; gradients are summed back to operand shapes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, InputError, UsageError

__all__ = [
    "Tensor",
    "ComputeTape",
    "current_tape",
    "no_grad",
    "record",
    "backward",
    "add",
    "sub",
    "mul",
    "hadamard",
    "neg",
    "matmul",
    "apply_activation",
    "sigmoid",
    "tanh",
    "relu",
    "softmax",
    "softmax_rows",
    "concat",
    "stack",
    "reshape",
    "flatten",
    "transpose",
    "swapaxes",
    "getitem",
    "sum_over",
    "mean",
    "BatchNormState",
    "batchnorm",
    "cross_entropy_logits",
    "l1_norm",
    "numerical_gradient",
    "gradcheck",
]

_local = threading.local()


class ComputeTape:
    """Ordered record of executed operations for one forward pass."""

    def __init__(self) -> None:
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()


def current_tape() -> ComputeTape:
    """Return the active tape of the calling thread, creating it on demand."""
    tape = getattr(_local, "tape", None)
    if tape is None or tape.consumed:
        tape = _local.tape = ComputeTape()
    return tape


def _grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Disable recording; results of operations never require gradients."""
    prev = _grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    """Dense float64 array with a gradient slot.

    Parameters
    ----------
    data : array_like
        Values, converted to a float64 array (copied).
    requires_grad : bool
        Whether gradients should be accumulated into :attr:`grad`.
    name : str, optional
        Label used in error messages and checkpoints.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._tape: ComputeTape | None = None
        self._has_grad = False

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.name = None
        out.grad = None
        out._tape = None
        out._has_grad = False
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0
        self._has_grad = False

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_over(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64), False)


def record(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Wrap ``data`` as the result of an operation on ``parents``.

    ``grad_fn(g)`` receives the gradient of the loss with respect to the
    result and must return one gradient (or ``None``) per parent, each with
    the parent's shape.  This is the extension point for fused operations.
    """
    parents = tuple(parents)
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, needs)
    if needs:
        tape = current_tape()
        tape.entries.append((out, parents, grad_fn))
        out._tape = tape
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    The tape that produced ``loss`` is cleared afterwards; a second call
    without a new forward pass raises :class:`UsageError`.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise UsageError("backward() needs a scalar Tensor loss")
    tape = loss._tape
    if tape is None:
        raise UsageError("loss was not produced by a taped forward pass")
    if tape.consumed:
        raise UsageError("backward() already ran for this forward pass")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, grad_fn in reversed(tape.entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, grad_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._tape is None:
                p.grad += pg
                p._has_grad = True
            else:
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg
    tape.clear()
    tape.consumed = True


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def hadamard(a, b) -> Tensor:
    """Elementwise product of two tensors of identical shape."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    return mul(a, b)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes follow np.matmul."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(lead + (b.shape[1],))

        def grad_fn(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return record(out, (a, b), grad_fn)

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(a.data @ b.data, (a, b), grad_fn)


# ---------------------------------------------------------------------------
# activations


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form is stable for any finite x and much faster than expit
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = _sigmoid_np(x.data)
    return record(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return record(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def apply_activation(x, kind: str) -> Tensor:
    """Apply ``sigmoid``, ``tanh`` or ``relu`` elementwise."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), grad_fn)


def softmax_rows(x) -> Tensor:
    """Softmax of every row (last axis) of ``x``."""
    x = _as_tensor(x)
    if x.ndim < 1 or 0 in x.shape:
        raise DimensionError(f"softmax_rows needs a non-empty tensor, got {x.shape}")
    return softmax(x, axis=-1)


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    ax = axis % out.ndim
    cuts = np.cumsum([p.shape[ax] for p in parts])[:-1]
    return record(out, parts, lambda g: tuple(np.split(g, cuts, axis=ax)))


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("stack needs at least one tensor")
    try:
        out = np.stack([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None
    ax = axis % out.ndim
    return record(out, parts,
                  lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(parts))))


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    return record(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x, start_axis: int = 0) -> Tensor:
    """Collapse all axes from ``start_axis`` onwards into one."""
    x = _as_tensor(x)
    return reshape(x, x.shape[:start_axis] + (-1,))


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = _as_tensor(x)
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, axes)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def getitem(x, idx) -> Tensor:
    x = _as_tensor(x)
    out = x.data[idx]
    basic = _is_basic_index(idx)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return record(np.array(out, dtype=np.float64) if not basic else out, (x,), grad_fn)


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_over(x, axis=None, keepdims: bool = False) -> Tensor:
    """Sum over ``axis`` (all axes when ``None``)."""
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return record(np.asarray(out), (x,), grad_fn)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum_over(x, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# normalization and losses


class BatchNormState:
    """Running statistics of a batch-normalization layer."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.momentum = momentum
        self.eps = eps

    def copy(self) -> "BatchNormState":
        new = BatchNormState(len(self.running_mean), self.momentum, self.eps)
        new.running_mean = self.running_mean.copy()
        new.running_var = self.running_var.copy()
        return new


def batchnorm(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Batch normalization of a ``(B, F)`` input.

    In training mode each feature is normalized with the biased batch
    variance and the running statistics are updated (unbiased variance, as
    in common frameworks).  In inference mode the running statistics are used.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batchnorm: input {x.shape}, scale {gamma.shape}, shift {beta.shape}")
    B = x.shape[0]
    eps = state.eps
    if training:
        if B < 2:
            raise ConfigurationError("batchnorm in training mode needs at least 2 instances")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * B / (B - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        out = xhat * gamma.data + beta.data

        def grad_fn(g):
            dxhat = g * gamma.data
            dx = inv / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

        return record(out, (x, gamma, beta), grad_fn)

    inv = 1.0 / np.sqrt(state.running_var + eps)
    xhat = (x.data - state.running_mean) * inv
    out = xhat * gamma.data + beta.data
    return record(out, (x, gamma, beta),
                  lambda g: (g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)))


def cross_entropy_logits(logits, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} do not match labels {labels.shape}")
    C = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C
                        or not np.all(np.equal(np.mod(labels, 1), 0))):
        raise InputError(f"labels must be integers in [0, {C - 1}]")
    labels = labels.astype(np.int64)
    B = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(B)
    value = -logp[rows, labels].mean()

    def grad_fn(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / B,)

    return record(np.asarray(value), (logits,), grad_fn)


def l1_norm(params: Iterable[Tensor]) -> Tensor:
    """Sum of absolute values of every entry; subgradient 0 at exactly 0."""
    params = tuple(_as_tensor(p) for p in params)
    total = float(sum(np.abs(p.data).sum() for p in params))
    return record(np.asarray(total), params,
                  lambda g: tuple(g * np.sign(p.data) for p in params))


# ---------------------------------------------------------------------------
# finite-difference verification


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``fn()`` w.r.t. ``tensor``."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
    return grad


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest per-coordinate error ``|g - g_fd| / max(1, |g|, |g_fd|)``.

    ``fn`` must rebuild the scalar output from ``tensors`` on every call.
    """
    for t in tensors:
        t.zero_grad()
    out = fn()
    backward(out)
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy()
        numeric = numerical_gradient(fn, t, h)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        if analytic.size:
            worst = max(worst, float((np.abs(analytic - numeric) / denom).max()))
        t.zero_grad()
    return worst
