"""Semidiscrete forward density equation and its exponential time marching.

Boundary rows come from eliminating the ghost value through the flux
condition ``(V rho - sigma^2/2 rho')(a) = beta_a rho(a)`` (same at ``b``), with
drift ``V = P rho + s u``.  At node 0 this adds

    (2/h) (beta_a rho_0 - V_0 rho_0)

to the Neumann-closed diffusion row, and ``-(2/h)(beta_b - V) rho`` at the last
node.  The ``beta`` part is constant and linear, so it is folded into the
diffusion operator as a Robin row.  The drift part is kept with the term that
carries the drift: the nonlinear remainder in general, and the time-dependent
linear operator for the ``s u`` drift when ``s`` does not depend on ``rho``.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from .model import Discretization, ModelSpec, TrajectoryField
from .steppers import SemilinearSystem, TimeGrid, exp_euler_magnus_step, exp_euler_step

logger = logging.getLogger(__name__)


class ForwardSolveError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        raise FloatingPointError(f"non-finite {what} at node {int(np.argmax(bad))}")


def assemble_forward(disc: Discretization, t: float, rho: np.ndarray, u_t: np.ndarray):
    """Return ``(A, g)``: the linear operator and the nonlinear remainder at ``t``.

    In the general case ``A`` is the constant diffusion operator.  When the
    selective function ignores the density, the three control terms move into
    ``A`` (sparse, time dependent).
    """
    model = disc.model
    x, D1, h = disc.x, disc.D1, disc.grid.h
    Pr = disc.apply_P(rho)
    s = np.broadcast_to(model.selective(t, x, rho), x.shape)
    _check_finite(Pr, "interaction drift")
    _check_finite(s, "selective function")
    drho = D1 @ rho
    g = -(D1 @ Pr) * rho - Pr * drho

    if model.selective_density_independent:
        su = s * u_t
        react = (D1 @ s) * u_t + s * (D1 @ u_t)
        A = disc.diffusion_op - sp.diags(react) - sp.diags(su) @ D1
        A = A.tolil()
        A[0, 0] -= 2.0 / h * su[0]
        A[-1, -1] += 2.0 / h * su[-1]
        A = A.tocsr()
        g[0] -= 2.0 / h * Pr[0] * rho[0]
        g[-1] += 2.0 / h * Pr[-1] * rho[-1]
        return A, g

    su = s * u_t
    g -= (D1 @ s) * u_t * rho + s * (D1 @ u_t) * rho + su * drho
    flux = (Pr + su) * rho
    g[0] -= 2.0 / h * flux[0]
    g[-1] += 2.0 / h * flux[-1]
    return disc.diffusion_op, g


def forward_system(disc: Discretization, tg: TimeGrid, u: np.ndarray) -> SemilinearSystem:
    model = disc.model

    def linear(t):
        if not model.selective_density_independent:
            return disc.diffusion_op
        k = tg.index(t)
        A, _ = assemble_forward(disc, t, np.zeros(disc.n), u[k])
        return A

    def nonlinear(t, rho):
        k = tg.index(t)
        _, g = assemble_forward(disc, t, rho, u[k])
        return g

    return SemilinearSystem(
        linear,
        nonlinear,
        constant_linear=not model.selective_density_independent,
        krylov_tol=disc.krylov_tol,
        dense_threshold=disc.dense_threshold,
    )


def solve_forward(
    disc: Discretization,
    tg: TimeGrid,
    u: TrajectoryField | np.ndarray,
    rho0: np.ndarray | None = None,
) -> TrajectoryField:
    """March the density from ``rho0`` over ``tg`` with the control ``u`` held given.

    Exponential Euler for a constant linear part (general selective function),
    exponential Euler-Magnus anchored at ``t_k`` otherwise.
    """
    uvals = u.values if isinstance(u, TrajectoryField) else np.asarray(u, dtype=float)
    if uvals.shape != (tg.m + 1, disc.n):
        raise ValueError(f"control shape {uvals.shape}, expected {(tg.m + 1, disc.n)}")
    rho = np.empty((tg.m + 1, disc.n))
    rho[0] = disc.initial_density() if rho0 is None else rho0
    sys = forward_system(disc, tg, uvals)
    step = exp_euler_magnus_step if disc.model.selective_density_independent else exp_euler_step
    for k in range(tg.m):
        tau = tg.t[k + 1] - tg.t[k]
        try:
            rho[k + 1] = step(sys, tg.t[k], tau, rho[k])
        except (ArithmeticError, RuntimeError) as exc:
            raise ForwardSolveError(str(exc), step=k) from exc
        if not np.all(np.isfinite(rho[k + 1])):
            raise ForwardSolveError("non-finite density", step=k)
    return TrajectoryField(rho, disc.grid, tg)
