"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one input requires a gradient.  Outside of a tape nothing is recorded,
which is how inference runs without gradient bookkeeping::

    with Tape() as tape:
        loss = cross_entropy_loss(matmul(x, w), targets)
    tape.backward(loss)
    w.grad  # same shape as w.data
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class VocabularyError(IndexError):
    """A class index lies outside the logits' last axis."""


_TAPES: list["Tape"] = []

Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_from_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._from_op = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic sugar; the functional forms below do the work
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


class Tape:
    """Ordered record of differentiable operations.

    Ops are appended at creation time, so the list is already in topological
    order; :meth:`backward` replays it once in reverse.
    """

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Backward]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.ops)

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if output.data.size != 1:
                raise DimensionError(
                    f"backward needs a seed gradient for non-scalar output of shape {output.shape}"
                )
            seed = np.ones_like(output.data)
        output.grad = np.asarray(seed, dtype=np.float64) + (0.0 if output.grad is None else output.grad)
        for out, inputs, rule in reversed(self.ops):
            g = out.grad
            if g is None:
                continue
            for inp, gi in zip(inputs, rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi
            if out is not output:
                out.grad = None  # intermediate buffers are not kept
        self.ops.clear()


def no_tape_active() -> bool:
    return not _TAPES


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Backward) -> Tensor:
    out = Tensor(data)
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._from_op = True
        _TAPES[-1].ops.append((out, inputs, rule))
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


bias_add = add


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (unbroadcast(g / b.data, a.shape),
                              unbroadcast(-g * out / b.data, b.shape)))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _record(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _record(out, (x,), lambda g: (g * 0.5 / out,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def masked_fill(x, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true; those entries get no gradient."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, value, x.data)
    return _record(out, (x,), lambda g: (unbroadcast(np.where(mask, 0.0, g), x.shape),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record(out, (a, b), rule)


def linear(x, w, b=None) -> Tensor:
    """``x @ w (+ b)`` over the last axis, flattening leading axes into one GEMM."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0] or w.ndim != 2:
        raise DimensionError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = (x2 @ w.data).reshape(*lead, w.shape[1])
    if b is not None:
        b = as_tensor(b)
        out = out + b.data

    def rule(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0).reshape(b.shape)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, rule)


# ---------------------------------------------------------------- shape ops

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    axes = list(range(as_tensor(x).ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    advanced = _is_advanced(index)

    def rule(g):
        z = np.zeros_like(x.data)
        if advanced:
            np.add.at(z, index, g)
        else:
            z[index] = g
        return (z,)

    return _record(np.array(x.data[index]), (x,), rule)


def embedding_lookup(table, indices) -> Tensor:
    """Rows of ``table`` gathered by an integer array of any shape."""
    table = as_tensor(table)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise VocabularyError(f"embedding index outside [0, {table.shape[0]})")

    def rule(g):
        z = np.zeros_like(table.data)
        np.add.at(z, indices.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (z,)

    return _record(table.data[indices], (table,), rule)


def pad(x, widths: Sequence[tuple[int, int]]) -> Tensor:
    x = as_tensor(x)
    widths = tuple(tuple(w) for w in widths)
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
    return _record(np.pad(x.data, widths), (x,), lambda g: (g[slices],))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


# ---------------------------------------------------------------- reductions

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), rule)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = range(x.ndim) if axis is None else np.atleast_1d(axis)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / count)


mean_over_axis = mean


# ---------------------------------------------------------------- normalisers

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _record(out, (x,),
                   lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    return _record(out, (x,),
                   lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    xhat = (x.data - mu) * rstd

    def rule(g):
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, unbroadcast(g * xhat, gamma.shape), unbroadcast(g, beta.shape)

    return _record(xhat * gamma.data + beta.data, (x, gamma, beta), rule)


class BatchNormState:
    """Running statistics for :func:`batch_norm_1d` (momentum 0.1, eps 1e-5)."""

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.momentum = momentum
        self.eps = eps


def batch_norm_1d(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Normalise the last axis; statistics pool every other axis."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    if not training:
        scale = gamma.data / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) / np.sqrt(state.running_var + state.eps)
        return _record(x.data * scale + (beta.data - state.running_mean * scale), (x, gamma, beta),
                       lambda g: (g * scale, unbroadcast(g * xhat, gamma.shape),
                                  unbroadcast(g, beta.shape)))

    n = x.data.size // x.shape[-1]
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    m = state.momentum
    state.running_mean = (1 - m) * state.running_mean + m * mu
    state.running_var = (1 - m) * state.running_var + m * var * (n / max(n - 1, 1))
    rstd = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * rstd

    def rule(g):
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).mean(axis=axes))
        return dx, unbroadcast(g * xhat, gamma.shape), unbroadcast(g, beta.shape)

    return _record(xhat * gamma.data + beta.data, (x, gamma, beta), rule)


# ---------------------------------------------------------------- convolution

def temporal_conv1d(x, w, stride: int = 1) -> Tensor:
    """Convolve along axis 1 of ``x`` (N, T, ..., C_in) with ``w`` (k, C_in, C_out).

    Zero padding of ``(k - 1) // 2`` on both ends; every position on the middle
    axes is convolved independently.
    """
    x, w = as_tensor(x), as_tensor(w)
    k, c_in, c_out = w.shape
    if x.shape[-1] != c_in:
        raise DimensionError(f"temporal_conv1d channel mismatch: {x.shape} vs kernel {w.shape}")
    p = (k - 1) // 2
    t_in = x.shape[1]
    t_out = (t_in + 2 * p - k) // stride + 1
    if t_out < 1:
        raise DimensionError(f"temporal_conv1d: length {t_in} too short for kernel {k}")
    widths = [(0, 0)] * x.ndim
    widths[1] = (p, p)
    xp = np.pad(x.data, widths)
    span = stride * (t_out - 1) + 1
    out_shape = (x.shape[0], t_out) + x.shape[2:-1] + (c_out,)
    # im2col: (N, T', ..., C_in, k) window view -> (rows, k * C_in), one GEMM
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, :span:stride]
    cols = np.ascontiguousarray(np.moveaxis(windows, -1, -2)).reshape(-1, k * c_in)
    w2 = w.data.reshape(k * c_in, c_out)
    out = cols @ w2

    def rule(g):
        g2 = g.reshape(-1, c_out)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape((x.shape[0], t_out) + x.shape[2:-1] + (k, c_in))
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + span:stride] += gcols[..., j, :]
            gx = gxp[:, p:p + t_in]
        return gx, gw

    return _record(out.reshape(out_shape), (x, w), rule)


# ---------------------------------------------------------------- losses

def cross_entropy_loss(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood in nats over positions where ``mask`` is true."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n_classes = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets {targets.shape} do not match logits {logits.shape}")
    mask = np.ones(targets.shape, bool) if mask is None else np.asarray(mask, dtype=bool)
    live = targets[mask]
    if live.size and (live.min() < 0 or live.max() >= n_classes):
        raise VocabularyError(f"target index outside [0, {n_classes})")
    count = max(int(mask.sum()), 1)
    safe = np.where(mask, targets, 0)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def rule(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, safe[..., None],
                          np.take_along_axis(grad, safe[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * (mask[..., None] * (g / count)),)

    return _record(np.asarray(loss), (logits,), rule)
