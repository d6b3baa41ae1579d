"""The exponential-integrator kernel ``exp(tau X) v + tau phi_1(tau X) w``.

Two routes are provided:

* a dense route through one exponential of the matrix augmented by the
  column ``w`` (the top ``n`` entries of ``exp(tau [[X, w], [0, 0]]) [v; 1]``);
* a Krylov route (Arnoldi on the same augmented operator, full
  orthogonalization, a posteriori error estimate and substepping of ``tau``)
  that only needs matrix-vector products.

:func:`phi1_combined` dispatches between them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

logger = logging.getLogger(__name__)

Operator = Union[np.ndarray, sp.spmatrix, LinearOperator, Callable[[np.ndarray], np.ndarray]]

DEFAULT_KRYLOV_TOL = 1e-10
DEFAULT_DENSE_THRESHOLD = 400
KRYLOV_MAX_DIM = 128


class MatrixFunctionError(RuntimeError):
    pass


class KrylovConvergenceError(MatrixFunctionError):
    pass


@dataclass
class PhiActionStats:
    krylov_dim: int = 0
    substeps: int = 0
    matvecs: int = 0
    method: str = "dense"


@dataclass
class PhiActionResult:
    y: np.ndarray
    stats: PhiActionStats = field(default_factory=PhiActionStats)


def expm_dense(X: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with Pade approximants."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise MatrixFunctionError("expm_dense: non-finite matrix entries")
    E = scipy.linalg.expm(X)
    if not np.all(np.isfinite(E)):
        raise MatrixFunctionError(
            f"expm_dense: overflow (1-norm of input {np.linalg.norm(X, 1):.3e})"
        )
    return E


def _dense(X) -> np.ndarray:
    if sp.issparse(X):
        return X.toarray()
    return np.asarray(X, dtype=float)


def _check_dims(n: int, v: np.ndarray, w: np.ndarray) -> None:
    if v.shape != (n,) or w.shape != (n,):
        raise ValueError(f"dimension mismatch: operator is {n}x{n}, v {v.shape}, w {w.shape}")


def phi1_combined_dense(tau: float, X, v: np.ndarray, w: np.ndarray) -> PhiActionResult:
    Xd = _dense(X)
    n = Xd.shape[0]
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if Xd.shape != (n, n):
        raise ValueError(f"operator must be square, got {Xd.shape}")
    _check_dims(n, v, w)
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = tau * Xd
    aug[:n, n] = tau * w
    E = expm_dense(aug)
    y = E[:n, :n] @ v + E[:n, n]
    return PhiActionResult(y, PhiActionStats(method="dense"))


class PhiPropagator:
    """Precomputed ``exp(tau X)`` and ``tau phi_1(tau X)`` for a fixed matrix and step.

    Reusable across all steps of a uniform-step solve with a constant linear part.
    """

    def __init__(self, tau: float, X):
        Xd = _dense(X)
        n = Xd.shape[0]
        aug = np.zeros((2 * n, 2 * n))
        aug[:n, :n] = tau * Xd
        aug[:n, n:] = tau * np.eye(n)
        E = expm_dense(aug)
        self.tau = tau
        self.expm = E[:n, :n]
        self.tau_phi1 = E[:n, n:]

    def apply(self, v: np.ndarray, w: np.ndarray) -> PhiActionResult:
        return PhiActionResult(self.expm @ v + self.tau_phi1 @ w, PhiActionStats(method="cached"))


def _as_matvec(X) -> tuple[Callable[[np.ndarray], np.ndarray], int | None]:
    if isinstance(X, LinearOperator):
        return X.matvec, X.shape[0]
    if sp.issparse(X) or isinstance(X, np.ndarray):
        return X.dot, X.shape[0]
    if callable(X):
        return X, None
    raise TypeError(f"unsupported operator type {type(X).__name__}")


_CHECKPOINTS = frozenset(list(range(4, 33, 4)) + list(range(40, 257, 8)))


def _small_phi(dtH: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``exp(dtH) e1`` and ``phi_1(dtH) e1`` for a small Hessenberg block."""
    k = dtH.shape[0]
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = dtH
    M[0, k] = 1.0
    E = scipy.linalg.expm(M)
    return E[:k, 0], E[:k, k]


def phi1_combined_krylov(
    tau: float,
    X,
    v: np.ndarray,
    w: np.ndarray,
    tol: float = DEFAULT_KRYLOV_TOL,
    max_dim: int = KRYLOV_MAX_DIM,
    max_substeps: int = 10_000,
) -> PhiActionResult:
    """Adaptive Krylov evaluation of ``exp(tau X) v + tau phi_1(tau X) w``.

    The augmented system ``d/dt [y; eta] = [[X, w/eta], [0, 0]] [y; eta]`` is
    advanced over ``[0, tau]``.  Each substep builds an Arnoldi basis of the
    augmented operator and accepts the largest step whose residual estimate
    ``beta h_{k+1,k} dt |e_k^T phi_1(dt H_k) e_1|`` is below
    ``tol * (dt / tau) * (|v|_inf + tau |w|_inf)``.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    matvec, nX = _as_matvec(X)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    n = v.shape[0]
    if nX is not None and nX != n:
        raise ValueError(f"dimension mismatch: operator is {nX}x{nX}, v has {n}")
    _check_dims(n, v, w)
    stats = PhiActionStats(method="krylov")

    wnorm = np.linalg.norm(w)
    if not v.any() and wnorm == 0.0:
        return PhiActionResult(np.zeros(n), stats)

    eta = wnorm
    w_col = w / eta if eta > 0 else w
    scale = np.abs(v).max() + tau * np.abs(w).max()

    def aug_matvec(z: np.ndarray) -> np.ndarray:
        out = np.empty(n + 1)
        out[:n] = matvec(z[:n])
        if eta > 0:
            out[:n] += z[n] * w_col
        out[n] = 0.0
        return out

    y = np.append(v, eta)
    t = 0.0
    dt = tau
    V = np.empty((max_dim + 1, n + 1))
    H = np.zeros((max_dim + 1, max_dim + 1))

    while t < tau * (1 - 1e-14):
        if stats.substeps >= max_substeps:
            raise KrylovConvergenceError(
                f"no convergence after {stats.substeps} substeps "
                f"(t={t:.3e} of tau={tau:.3e}, dim cap {max_dim}, tol {tol:.1e})"
            )
        dt = min(dt, tau - t)
        beta = np.linalg.norm(y)
        if beta == 0.0:
            break
        if not np.isfinite(beta):
            raise MatrixFunctionError(f"non-finite Krylov iterate at t={t:.3e}")
        V[0] = y / beta
        H[:] = 0.0
        accepted = None
        for j in range(max_dim):
            z = aug_matvec(V[j])
            stats.matvecs += 1
            # classical Gram-Schmidt, applied twice
            h = V[: j + 1] @ z
            z -= V[: j + 1].T @ h
            h2 = V[: j + 1] @ z
            z -= V[: j + 1].T @ h2
            H[: j + 1, j] = h + h2
            hnext = np.linalg.norm(z)
            k = j + 1
            happy = hnext <= 1e-13 * max(np.abs(H[: k, j]).max(), 1e-300)
            if happy:
                ex, _ = _small_phi(dt * H[:k, :k])
                accepted = (k, dt, ex)
                break
            H[k, j] = hnext
            V[k] = z / hnext
            if k in _CHECKPOINTS or k == max_dim:
                while True:
                    ex, ph = _small_phi(dt * H[:k, :k])
                    err = beta * hnext * dt * abs(ph[k - 1])
                    allowed = tol * scale * dt / tau
                    if err <= allowed:
                        accepted = (k, dt, ex)
                        break
                    if k < max_dim:
                        break
                    # basis is full: shrink the substep with the same basis
                    factor = 0.9 * (allowed / err) ** (1.0 / (k + 1)) if err > 0 else 0.5
                    dt *= min(0.9, max(0.1, factor))
                    if dt < tau * 1e-13:
                        raise KrylovConvergenceError(
                            f"substep underflow at t={t:.3e} (tau={tau:.3e}, dim {k}, "
                            f"estimate {err:.3e} vs allowed {allowed:.3e})"
                        )
                if accepted is not None:
                    break
        k, dt_used, ex = accepted
        y = beta * (V[:k].T @ ex)
        y[n] = eta
        t += dt_used
        stats.substeps += 1
        stats.krylov_dim = max(stats.krylov_dim, k)
        dt = dt_used if k == max_dim else 2.0 * dt_used

    out = y[:n]
    if not np.all(np.isfinite(out)):
        raise MatrixFunctionError("Krylov result has non-finite entries")
    return PhiActionResult(out, stats)


def phi1_combined(
    tau: float,
    X,
    v: np.ndarray,
    w: np.ndarray,
    tol: float = DEFAULT_KRYLOV_TOL,
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> PhiActionResult:
    """Dense route for explicit matrices up to ``dense_threshold`` rows, Krylov otherwise."""
    explicit = isinstance(X, np.ndarray) or sp.issparse(X)
    if explicit and X.shape[0] <= dense_threshold:
        return phi1_combined_dense(tau, X, v, w)
    return phi1_combined_krylov(tau, X, v, w, tol=tol)
