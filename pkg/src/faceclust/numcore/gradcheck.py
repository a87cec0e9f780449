"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor, backward


def grad_check(f: Callable[[], Tensor], x: Tensor | Iterable[Tensor], eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is re-evaluated from scratch for every perturbation, so it must read
    the current values of ``x`` and be deterministic (dropout off).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    for t in xs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(np.asarray(f().data, dtype=np.float64).sum())
            flat[i] = orig - eps
            down = float(np.asarray(f().data, dtype=np.float64).sum())
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
