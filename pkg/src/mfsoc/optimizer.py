"""Cost functional, gradient direction and the steepest-descent outer loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .adjoint import solve_backward
from .forward import ForwardSolveError, solve_forward
from .model import Discretization, TrajectoryField
from .steppers import TimeGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DescentConfig:
    tol: float = 2e-3
    max_iters: int = 200
    lambda0: float = 1.0
    backtrack: float = 0.5
    min_lambda: float = 1e-8
    armijo_c: float = 1e-4
    fixed_lambda: Optional[float] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if self.fixed_lambda is not None and not self.fixed_lambda > 0:
            raise ValueError("fixed_lambda must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class OptimizationResult:
    u: TrajectoryField
    rho: TrajectoryField
    psi: TrajectoryField
    J_trace: np.ndarray
    iterations: int
    converged: bool
    lambdas: list[float] = field(default_factory=list)
    gradient_norms: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""

    @property
    def J(self) -> float:
        return float(self.J_trace[-1])


def space_time_inner(disc: Discretization, tg: TimeGrid, f: np.ndarray, g: np.ndarray,
                     weight: np.ndarray | None = None) -> float:
    """Trapezoidal ``int_0^T int_Omega f g (weight) dx dt``."""
    integrand = f * g if weight is None else f * g * weight
    return float(tg.weights() @ (integrand @ disc.weights))


def evaluate_cost(disc: Discretization, tg: TimeGrid, rho: TrajectoryField | np.ndarray,
                  u: TrajectoryField | np.ndarray) -> float:
    """``J = 1/2 int int (e + gamma u^2 rho) + 1/2 int c(x, rho(T))``, trapezoidal in x and t."""
    model = disc.model
    R = rho.values if isinstance(rho, TrajectoryField) else rho
    U = u.values if isinstance(u, TrajectoryField) else u
    x = disc.x
    running = np.empty_like(R)
    for k, t in enumerate(tg.t):
        running[k] = model.running_cost(t, x, R[k]) + model.gamma * U[k] ** 2 * R[k]
    J = 0.5 * float(tg.weights() @ (running @ disc.weights))
    if model.terminal_cost is not None:
        J += 0.5 * float(disc.weights @ model.terminal_cost(x, R[-1]))
    return J


def gradient_direction(disc: Discretization, tg: TimeGrid, rho: TrajectoryField | np.ndarray,
                       psi: TrajectoryField | np.ndarray, u: TrajectoryField | np.ndarray) -> TrajectoryField:
    """``G = gamma u + s(t, x, rho) d_x psi`` on every time slice."""
    model = disc.model
    R = rho.values if isinstance(rho, TrajectoryField) else rho
    Psi = psi.values if isinstance(psi, TrajectoryField) else psi
    U = u.values if isinstance(u, TrajectoryField) else u
    dpsi = (disc.D1 @ Psi.T).T
    G = np.empty_like(U)
    for k, t in enumerate(tg.t):
        s = np.broadcast_to(model.selective(t, disc.x, R[k]), disc.x.shape)
        G[k] = model.gamma * U[k] + s * dpsi[k]
    return TrajectoryField(G, disc.grid, tg)


def optimize(
    disc: Discretization,
    tg: TimeGrid,
    cfg: DescentConfig = DescentConfig(),
    u0: TrajectoryField | np.ndarray | None = None,
    callback: Callable[[int, float, float], None] | None = None,
) -> OptimizationResult:
    """Reduced-gradient descent: forward solve, adjoint solve, control update.

    The step ``lambda`` is ``cfg.fixed_lambda`` when set; otherwise it starts at
    ``cfg.lambda0`` every iteration and is backtracked until the Armijo
    condition ``J(u - lam G) <= J(u) - c lam <G, G>_rho`` holds.  ``<., .>_rho``
    is the density-weighted space-time product, the metric in which ``G`` is the
    gradient of ``J``.  Iteration stops once ``|J_new - J_old| < cfg.tol``.
    """
    start = time.perf_counter()
    if u0 is None:
        u = np.zeros((tg.m + 1, disc.n))
    else:
        u = np.array(u0.values if isinstance(u0, TrajectoryField) else u0, dtype=float)
    rho0 = disc.initial_density()

    rho = solve_forward(disc, tg, u, rho0)
    J = evaluate_cost(disc, tg, rho, u)
    trace = [J]
    lambdas: list[float] = []
    gnorms: list[float] = []
    converged = False
    message = "maximum iterations reached"
    psi = None
    logger.info("iter 0: J = %.10g", J)

    for it in range(1, cfg.max_iters + 1):
        psi = solve_backward(disc, tg, rho, u)
        G = gradient_direction(disc, tg, rho, psi, u).values
        slope = space_time_inner(disc, tg, G, G, weight=rho.values)
        gnorms.append(float(np.sqrt(max(slope, 0.0))))

        if cfg.fixed_lambda is not None:
            lam = cfg.fixed_lambda
            u_new = u - lam * G
            rho_new = solve_forward(disc, tg, u_new, rho0)
            J_new = evaluate_cost(disc, tg, rho_new, u_new)
        else:
            lam = cfg.lambda0
            while True:
                u_new = u - lam * G
                try:
                    rho_new = solve_forward(disc, tg, u_new, rho0)
                    J_new = evaluate_cost(disc, tg, rho_new, u_new)
                except ForwardSolveError as exc:
                    # an overlong trial step can blow the density up; treat it as rejected
                    logger.debug("trial lambda = %g rejected: %s", lam, exc)
                    J_new = np.inf
                if J_new <= J - cfg.armijo_c * lam * slope:
                    break
                lam *= cfg.backtrack
                if lam < cfg.min_lambda:
                    message = f"line search failed at iteration {it} (lambda < {cfg.min_lambda:g})"
                    logger.warning(message)
                    return OptimizationResult(
                        TrajectoryField(u, disc.grid, tg), rho, psi, np.array(trace),
                        it - 1, False, lambdas, gnorms, time.perf_counter() - start, message,
                    )

        change = abs(J_new - J)
        u, rho, J = u_new, rho_new, J_new
        trace.append(J)
        lambdas.append(lam)
        logger.info("iter %d: J = %.10g, lambda = %g, |dJ| = %.3e", it, J, lam, change)
        if callback is not None:
            callback(it, J, lam)
        if change < cfg.tol:
            converged = True
            message = f"functional stabilized (|dJ| = {change:.3e} < {cfg.tol:g})"
            break

    # adjoint consistent with the returned control and density
    psi = solve_backward(disc, tg, rho, u)
    return OptimizationResult(
        TrajectoryField(u, disc.grid, tg), rho, psi, np.array(trace),
        len(trace) - 1, converged, lambdas, gnorms, time.perf_counter() - start, message,
    )
