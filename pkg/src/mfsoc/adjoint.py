"""Backward adjoint equation ``-psi' = A_B(t) psi + g_B(t)``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .model import Discretization, TrajectoryField
from .steppers import SemilinearSystem, TimeGrid, exp_euler_magnus_step


class BackwardSolveError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass
class AdjointAssembly:
    A: Any
    source: np.ndarray


def assemble_adjoint(disc: Discretization, t: float, rho_t: np.ndarray, u_t: np.ndarray) -> AdjointAssembly:
    """``A_B = sigma^2/2 D2 + diag(P rho + (s + rho s_rho) u) D1 + Q diag(rho) D1``.

    The Robin rows ``(sigma^2/2) psi' = -beta psi`` sit in the diffusion block.
    The operator is an explicit matrix when the dense route applies or there is
    no interaction; otherwise a matrix-free operator.
    """
    model = disc.model
    x, D1 = disc.x, disc.D1
    s = np.broadcast_to(model.selective(t, x, rho_t), x.shape)
    s_rho = np.broadcast_to(model.selective_drho(t, x, rho_t), x.shape)
    coef = disc.apply_P(rho_t) + (s + rho_t * s_rho) * u_t
    if not np.all(np.isfinite(coef)):
        raise FloatingPointError(f"non-finite adjoint drift at node {int(np.argmax(~np.isfinite(coef)))}")
    source = 0.5 * np.asarray(model.running_cost_drho(t, x, rho_t)) + 0.5 * model.gamma * u_t**2
    source = np.broadcast_to(source, x.shape).astype(float)

    local = (disc.diffusion_op + sp.diags(coef) @ D1).tocsr()
    if disc.Q is None:
        return AdjointAssembly(local, source)
    if disc.use_dense:
        weighted_D1 = (sp.diags(rho_t) @ D1).tocsr()
        A = local.toarray() + np.asarray(weighted_D1.T @ disc.Q.T).T
        return AdjointAssembly(A, source)

    Q = disc.Q

    def matvec(psi):
        dpsi = D1 @ psi
        return local @ psi + Q @ (rho_t * dpsi)

    n = disc.n
    return AdjointAssembly(LinearOperator((n, n), matvec=matvec, dtype=float), source)


def terminal_condition(disc: Discretization, rho_T: np.ndarray) -> np.ndarray:
    """``psi_T = c_rho(x, rho_T) / 2``; zero without a terminal cost."""
    model = disc.model
    if model.terminal_cost_drho is None:
        return np.zeros(disc.n)
    return 0.5 * np.broadcast_to(model.terminal_cost_drho(disc.x, rho_T), disc.x.shape).astype(float)


def backward_system(disc: Discretization, tg: TimeGrid, rho: np.ndarray, u: np.ndarray) -> SemilinearSystem:
    """The adjoint equation in reversed time ``r = T - t`` as a forward system."""
    T = tg.T
    cache: dict[int, AdjointAssembly] = {}

    def assembly(r):
        k = tg.index(T - r)
        if k not in cache:
            cache.clear()
            cache[k] = assemble_adjoint(disc, tg.t[k], rho[k], u[k])
        return cache[k]

    return SemilinearSystem(
        lambda r: assembly(r).A,
        lambda r, psi: assembly(r).source,
        krylov_tol=disc.krylov_tol,
        dense_threshold=disc.dense_threshold,
    )


def solve_backward(
    disc: Discretization,
    tg: TimeGrid,
    rho: TrajectoryField | np.ndarray,
    u: TrajectoryField | np.ndarray,
) -> TrajectoryField:
    """``psi_k = exp(tau A_B(t_{k+1})) psi_{k+1} + tau phi_1(tau A_B(t_{k+1})) g_B(t_{k+1})``."""
    rvals = rho.values if isinstance(rho, TrajectoryField) else np.asarray(rho, dtype=float)
    uvals = u.values if isinstance(u, TrajectoryField) else np.asarray(u, dtype=float)
    psi = np.empty((tg.m + 1, disc.n))
    psi[-1] = terminal_condition(disc, rvals[-1])
    sys = backward_system(disc, tg, rvals, uvals)
    T = tg.T
    for k in range(tg.m - 1, -1, -1):
        tau = tg.t[k + 1] - tg.t[k]
        try:
            psi[k] = exp_euler_magnus_step(sys, T - tg.t[k + 1], tau, psi[k + 1])
        except (ArithmeticError, RuntimeError) as exc:
            raise BackwardSolveError(str(exc), step=k) from exc
        if not np.all(np.isfinite(psi[k])):
            raise BackwardSolveError("non-finite adjoint", step=k)
    return TrajectoryField(psi, disc.grid, tg)
