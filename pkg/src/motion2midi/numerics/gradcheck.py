"""Central finite-difference checks for taped gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-10)
    return float(diff / scale)


def numerical_gradient(fn: Callable[[], float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return grad


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                    seed: int = 0) -> float:
    """Worst relative error between taped and finite-difference gradients.

    A fixed random projection reduces non-scalar outputs to a scalar so that
    every output component contributes.
    """
    with Tape():
        probe = fn(*inputs)
    weights = np.random.default_rng(seed).standard_normal(probe.shape)

    def scalar() -> float:
        return float(np.sum(fn(*inputs).data * weights))

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        out = fn(*inputs)
    tape.backward(out, seed=weights)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        worst = max(worst, relative_error(analytic, numerical_gradient(scalar, t, h)))
    return worst
