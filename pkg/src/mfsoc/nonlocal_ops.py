"""Interaction kernels and the quadrature matrices of the nonlocal drift.

``P`` discretizes ``x -> int p(x, y) (y - x) rho(y) dy`` and ``Q`` the
adjoint-side operator ``x -> int p(y, x) (x - y) z(y) dy``.  Both carry the
trapezoidal weights in their columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import Grid1D


class KernelEvaluationError(ValueError):
    pass


class InteractionKernel:
    """Pairwise weight ``p(x, y)``; subclasses may provide a fast particle drift."""

    symmetric = False

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def particle_drift(self, x: np.ndarray) -> np.ndarray:
        """``N^-1 sum_j p(x_i, x_j)(x_j - x_i)`` for an ensemble ``x``.

        Generic fallback, quadratic in the ensemble size; evaluated in chunks.
        """
        out = np.empty_like(x)
        chunk = max(1, 2_000_000 // max(x.size, 1))
        for start in range(0, x.size, chunk):
            xi = x[start:start + chunk, None]
            out[start:start + chunk] = np.mean(self(xi, x[None, :]) * (x[None, :] - xi), axis=1)
        return out


@dataclass(frozen=True)
class CallableKernel(InteractionKernel):
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    symmetric: bool = False

    def __call__(self, x, y):
        return np.broadcast_to(self.fn(x, y), np.broadcast(x, y).shape)


@dataclass(frozen=True)
class ConstantKernel(InteractionKernel):
    value: float = 1.0
    symmetric = True

    def __call__(self, x, y):
        return np.full(np.broadcast(x, y).shape, float(self.value))

    def particle_drift(self, x):
        return self.value * (x.mean() - x)


@dataclass(frozen=True)
class FirstArgumentKernel(InteractionKernel):
    """``p(x, y) = f(x)``; the drift reduces to ``f(x_i)(mean(x) - x_i)``."""

    f: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x, y):
        return np.broadcast_to(self.f(x), np.broadcast(x, y).shape)

    def particle_drift(self, x):
        return self.f(x) * (x.mean() - x)


@dataclass(frozen=True)
class BoundedConfidenceKernel(InteractionKernel):
    """Indicator of ``|x - y| <= kappa`` (closed ball)."""

    kappa: float
    symmetric = True
    # absorbs rounding in |x_i - x_j| when kappa is an exact multiple of h
    slack: float = 1e-12

    def __call__(self, x, y):
        return (np.abs(x - y) <= self.kappa * (1 + self.slack)).astype(float)

    def particle_drift(self, x):
        order = np.argsort(x, kind="stable")
        xs = x[order]
        csum = np.concatenate(([0.0], np.cumsum(xs)))
        r = self.kappa * (1 + self.slack)
        lo = np.searchsorted(xs, xs - r, side="left")
        hi = np.searchsorted(xs, xs + r, side="right")
        drift_sorted = (csum[hi] - csum[lo]) - xs * (hi - lo)
        out = np.empty_like(x)
        out[order] = drift_sorted / x.size
        return out


def _checked(values: np.ndarray, what: str) -> np.ndarray:
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise KernelEvaluationError(f"{what}: non-finite kernel value at (i={i}, j={j})")
    return values


def interaction_matrix_P(g: Grid1D, w: np.ndarray, kernel: InteractionKernel) -> np.ndarray:
    x = g.nodes
    K = _checked(np.asarray(kernel(x[:, None], x[None, :]), dtype=float), "P")
    return K * (x[None, :] - x[:, None]) * w[None, :]


def adjoint_interaction_matrix_Q(g: Grid1D, w: np.ndarray, kernel: InteractionKernel) -> np.ndarray:
    # Q_ij = w_j p(x_j, x_i) (x_i - x_j): kernel arguments transposed w.r.t. P
    x = g.nodes
    K = _checked(np.asarray(kernel(x[None, :], x[:, None]), dtype=float), "Q")
    return K * (x[:, None] - x[None, :]) * w[None, :]
