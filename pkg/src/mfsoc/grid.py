"""Uniform 1D node grid, finite-difference matrices and trapezoidal weights.

All operators act on node values ``y[0..n-1]`` with ``y[0]`` at ``a`` and
``y[-1]`` at ``b``.  Matrices are returned as CSR sparse matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class InvalidDomainError(ValueError):
    """Raised for an empty interval or a grid with fewer than three nodes."""


@dataclass(frozen=True)
class Grid1D:
    a: float
    b: float
    n: int
    nodes: np.ndarray = field(repr=False, compare=False)

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def length(self) -> float:
        return self.b - self.a


def build_grid(a: float, b: float, n: int) -> Grid1D:
    a, b = float(a), float(b)
    if not b > a:
        raise InvalidDomainError(f"need b > a, got a={a}, b={b}")
    if int(n) != n or n < 3:
        raise InvalidDomainError(f"need an integer n >= 3, got {n}")
    n = int(n)
    h = (b - a) / (n - 1)
    nodes = a + h * np.arange(n)
    nodes[-1] = b
    nodes.setflags(write=False)
    return Grid1D(a, b, n, nodes)


def trapezoid_weights(g: Grid1D) -> np.ndarray:
    w = np.full(g.n, g.h)
    w[0] = w[-1] = 0.5 * g.h
    w.setflags(write=False)
    return w


def first_derivative_matrix(g: Grid1D) -> sp.csr_matrix:
    """Centered differences inside, second-order one-sided rows at the ends."""
    n, h = g.n, g.h
    D = sp.lil_matrix((n, n))
    idx = np.arange(1, n - 1)
    D[idx, idx - 1] = -0.5 / h
    D[idx, idx + 1] = 0.5 / h
    D[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[n - 1, n - 3:n] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def second_derivative_matrix(g: Grid1D) -> sp.csr_matrix:
    """Three-point Laplacian; the boundary rows omit the ghost-node term.

    Rows 0 and n-1 are ``(-2 y0 + y1)/h^2`` and ``(y_{n-2} - 2 y_{n-1})/h^2``.
    Use :func:`apply_robin_rows` to add the eliminated ghost value.
    """
    n, h = g.n, g.h
    main = np.full(n, -2.0 / h**2)
    off = np.full(n - 1, 1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def apply_robin_rows(D2: sp.spmatrix, h: float, c_a: float, c_b: float) -> sp.csr_matrix:
    """Close the ghost-ready Laplacian with ``y'(a) = c_a y(a)``, ``y'(b) = c_b y(b)``.

    The ghosts ``y_{-1} = y_1 - 2h c_a y_0`` and ``y_n = y_{n-2} + 2h c_b y_{n-1}``
    are substituted into the end rows, which gives
    ``(2 y_1 - 2 y_0 - 2h c_a y_0)/h^2`` at ``a`` and the mirror row at ``b``.
    """
    D = sp.lil_matrix(D2, dtype=float, copy=True)
    n = D.shape[0]
    D[0, 1] += 1.0 / h**2
    D[0, 0] += -2.0 * c_a / h
    D[n - 1, n - 2] += 1.0 / h**2
    D[n - 1, n - 1] += 2.0 * c_b / h
    return D.tocsr()


def neumann_laplacian(g: Grid1D) -> sp.csr_matrix:
    return apply_robin_rows(second_derivative_matrix(g), g.h, 0.0, 0.0)
