"""Problem data shared by the forward, adjoint and optimization layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .grid import (
    Grid1D,
    apply_robin_rows,
    build_grid,
    first_derivative_matrix,
    second_derivative_matrix,
    trapezoid_weights,
)
from .matfun import DEFAULT_DENSE_THRESHOLD, DEFAULT_KRYLOV_TOL
from .nonlocal_ops import (
    InteractionKernel,
    adjoint_interaction_matrix_Q,
    interaction_matrix_P,
)
from .steppers import TimeGrid

# f(t, x, rho) -> array, broadcast over the grid
FieldFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
# c(x, rho_T) -> array
TerminalFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _one(t, x, rho):
    return np.ones_like(x)


def _zero(t, x, rho):
    return np.zeros_like(x)


@dataclass
class ModelSpec:
    """All problem-defining data of a selective mean-field control problem.

    ``kernel=None`` means no interaction.  ``terminal_cost=None`` means no
    terminal cost.  Fluxes follow the rewritten 1D condition: the total flux
    equals ``beta_a * rho`` at ``a`` and ``beta_b * rho`` at ``b``, so an exit at
    ``a`` needs ``beta_a < 0``.
    """

    name: str
    domain: tuple[float, float]
    sigma: float
    gamma: float
    T: float
    rho0: Callable[[np.ndarray], np.ndarray]
    kernel: Optional[InteractionKernel] = None
    selective: FieldFn = _one
    selective_drho: FieldFn = _zero
    running_cost: FieldFn = _zero
    running_cost_drho: FieldFn = _zero
    terminal_cost: Optional[TerminalFn] = None
    terminal_cost_drho: Optional[TerminalFn] = None
    beta_a: float = 0.0
    beta_b: float = 0.0
    selective_density_independent: bool = False
    normalize_rho0: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if (self.terminal_cost is None) != (self.terminal_cost_drho is None):
            raise ValueError("terminal cost and its derivative must be given together")

    @property
    def diffusion(self) -> float:
        """The coefficient ``sigma^2 / 2`` of the Laplacian."""
        return 0.5 * self.sigma**2

    @property
    def zero_flux(self) -> bool:
        return self.beta_a == 0.0 and self.beta_b == 0.0

    def robin_coefficients(self) -> tuple[float, float]:
        """``c`` in ``d_x y = c y`` shared by the density flux rows and the adjoint rows."""
        return -2.0 * self.beta_a / self.sigma**2, -2.0 * self.beta_b / self.sigma**2


@dataclass
class TrajectoryField:
    values: np.ndarray
    grid: Grid1D
    timegrid: TimeGrid

    def __post_init__(self):
        shape = (self.timegrid.m + 1, self.grid.n)
        if self.values.shape != shape:
            raise ValueError(f"trajectory shape {self.values.shape}, expected {shape}")

    @classmethod
    def zeros(cls, grid: Grid1D, timegrid: TimeGrid) -> "TrajectoryField":
        return cls(np.zeros((timegrid.m + 1, grid.n)), grid, timegrid)

    def __getitem__(self, k):
        return self.values[k]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]


@dataclass
class Discretization:
    """Spatial operators of one model on one grid, assembled once per run."""

    model: ModelSpec
    grid: Grid1D
    weights: np.ndarray
    D1: sp.csr_matrix
    D2: sp.csr_matrix
    diffusion_op: sp.csr_matrix
    P: Optional[np.ndarray]
    Q: Optional[np.ndarray]
    krylov_tol: float = DEFAULT_KRYLOV_TOL
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def use_dense(self) -> bool:
        return self.grid.n <= self.dense_threshold

    def apply_P(self, rho: np.ndarray) -> np.ndarray:
        if self.P is None:
            return np.zeros_like(rho)
        return self.P @ rho

    def mass(self, rho: np.ndarray) -> float:
        return float(self.weights @ rho)

    def initial_density(self) -> np.ndarray:
        raw = np.asarray(self.model.rho0(self.x), dtype=float)
        if self.model.normalize_rho0:
            from .models import normalize_density

            return normalize_density(self.grid, self.weights, raw)
        return raw


def discretize(
    model: ModelSpec,
    n: int,
    krylov_tol: float = DEFAULT_KRYLOV_TOL,
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> Discretization:
    g = build_grid(model.domain[0], model.domain[1], n)
    w = trapezoid_weights(g)
    D1 = first_derivative_matrix(g)
    D2 = second_derivative_matrix(g)
    c_a, c_b = model.robin_coefficients()
    diffusion_op = (model.diffusion * apply_robin_rows(D2, g.h, c_a, c_b)).tocsr()
    if model.kernel is None:
        P = Q = None
    else:
        P = interaction_matrix_P(g, w, model.kernel)
        Q = adjoint_interaction_matrix_Q(g, w, model.kernel)
    return Discretization(
        model, g, w, D1, D2, diffusion_op, P, Q,
        krylov_tol=krylov_tol, dense_threshold=dense_threshold,
    )
