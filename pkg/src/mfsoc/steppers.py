"""One-step exponential integrators for ``y' = A(t) y + g(t, y)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .matfun import (
    DEFAULT_DENSE_THRESHOLD,
    DEFAULT_KRYLOV_TOL,
    PhiPropagator,
    phi1_combined,
)


@dataclass(frozen=True)
class TimeGrid:
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two instants")
        if not np.all(np.diff(t) > 0):
            raise ValueError("time instants must be strictly increasing")
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, T: float, m: int) -> "TimeGrid":
        if T <= 0 or m < 1:
            raise ValueError(f"need T > 0 and m >= 1, got T={T}, m={m}")
        t = np.linspace(0.0, T, m + 1)
        return cls(t)

    @property
    def m(self) -> int:
        return self.t.size - 1

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.t)

    def weights(self) -> np.ndarray:
        """Trapezoidal weights in time."""
        tau = self.steps
        w = np.zeros(self.t.size)
        w[:-1] += 0.5 * tau
        w[1:] += 0.5 * tau
        return w

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"instant {t} is not on the time grid")
        return k


@dataclass
class SemilinearSystem:
    """``linear_part(t)`` returns an operator; ``nonlinear_part(t, y)`` an array."""

    linear_part: Callable[[float], Any]
    nonlinear_part: Callable[[float, np.ndarray], np.ndarray]
    constant_linear: bool = False
    krylov_tol: float = DEFAULT_KRYLOV_TOL
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD
    _cache: dict = field(default_factory=dict, repr=False)

    def propagator(self, tau: float):
        """Cached dense ``(exp, tau*phi_1)`` pair for a constant explicit matrix."""
        key = round(tau, 15)
        if key not in self._cache:
            A = self.linear_part(0.0)
            if not hasattr(A, "shape") or A.shape[0] > self.dense_threshold:
                self._cache[key] = None
            else:
                self._cache[key] = PhiPropagator(tau, A)
        return self._cache[key]


def _kernel(sys: SemilinearSystem, A, tau, v, w):
    return phi1_combined(tau, A, v, w, tol=sys.krylov_tol, dense_threshold=sys.dense_threshold).y


def exp_euler_step(sys: SemilinearSystem, t_k: float, tau: float, y_k: np.ndarray) -> np.ndarray:
    """``exp(tau A) y_k + tau phi_1(tau A) g(t_k, y_k)`` for a constant ``A``."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    g = sys.nonlinear_part(t_k, y_k)
    if sys.constant_linear:
        prop = sys.propagator(tau)
        if prop is not None:
            return prop.apply(y_k, g).y
    return _kernel(sys, sys.linear_part(t_k), tau, y_k, g)


def exp_euler_magnus_step(
    sys: SemilinearSystem, t_anchor: float, tau: float, y_in: np.ndarray
) -> np.ndarray:
    """Exponential Euler with the linear part frozen at ``t_anchor``.

    Backward-in-time equations are handled by passing the time-reversed system.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    A = sys.linear_part(t_anchor)
    g = sys.nonlinear_part(t_anchor, y_in)
    return _kernel(sys, A, tau, y_in, g)
