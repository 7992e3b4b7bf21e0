"""Finite-difference verification of reverse-mode gradients (64-bit)."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    max_error: float
    errors: dict[str, float] = field(default_factory=dict)

    def failures(self, tol: float) -> list[str]:
        return [k for k, e in self.errors.items() if not e < tol]


def relative_error(g_ad, g_fd) -> np.ndarray:
    g_ad, g_fd = np.asarray(g_ad), np.asarray(g_fd)
    return np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))


def _scalar(out) -> float:
    v = out.data if isinstance(out, Tensor) else np.asarray(out)
    if v.size != 1:
        raise ValueError("grad_check: f must return a scalar")
    v = float(v.reshape(()))
    if not np.isfinite(v):
        raise ValueError("grad_check: f is not finite at the check point")
    return v


def grad_check(
    f: Callable[..., Tensor],
    inputs,
    delta: float = 1e-4,
) -> GradCheckResult:
    """Compare the tape gradient of scalar ``f(*tensors)`` to central differences.

    The difference quotient is the fourth-order central stencil at steps
    ``delta`` and ``2 delta``, so truncation error does not swamp small
    gradient entries.

    ``inputs`` is a sequence of arrays or a name -> array mapping; they are
    promoted to float64 tensors. The error per coordinate is
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    if isinstance(inputs, Mapping):
        names, arrays = list(inputs), list(inputs.values())
    else:
        arrays = list(inputs)
        names = [str(i) for i in range(len(arrays))]
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]

    with Tape() as tape:
        out = f(*tensors)
    _scalar(out)
    tape.backward(out)
    analytic = [t.grad.copy() for t in tensors]

    def evaluate():
        return _scalar(f(*tensors))

    errors = {}
    for name, t, g in zip(names, tensors, analytic):
        flat = t.data.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for step in (delta, -delta, 2 * delta, -2 * delta):
                flat[i] = orig + step
                vals.append(evaluate())
            flat[i] = orig
            fd[i] = (8 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12 * delta)
        errors[name] = float(relative_error(g.reshape(-1), fd).max()) if flat.size else 0.0
    return GradCheckResult(max(errors.values(), default=0.0), errors)
