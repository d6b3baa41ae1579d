import numpy as np
import pytest
from scipy.integrate import solve_ivp

from mfsoc.grid import build_grid, neumann_laplacian
from mfsoc.matfun import expm_dense
from mfsoc.steppers import SemilinearSystem, TimeGrid, exp_euler_magnus_step, exp_euler_step


def const_system(A, g):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return SemilinearSystem(lambda t: A, g, constant_linear=True)


def test_scalar_relaxation_is_exact():
    sys = const_system([[-1.0]], lambda t, y: np.ones(1))
    y1 = exp_euler_step(sys, 0.0, 1.0, np.zeros(1))
    assert y1[0] == pytest.approx(1 - np.exp(-1), rel=1e-14)
    assert y1[0] == pytest.approx(0.632121, abs=5e-7)


def test_identity_flow():
    sys = const_system(np.zeros((3, 3)), lambda t, y: np.zeros(3))
    y0 = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(exp_euler_step(sys, 0.0, 0.3, y0), y0)


@pytest.mark.parametrize("tau", [1e-3, 0.1, 1.0, 25.0])
def test_exact_for_linear_inhomogeneous(tau):
    rng = np.random.default_rng(1)
    n = 8
    A = rng.standard_normal((n, n)) - 3 * np.eye(n)
    b = rng.standard_normal(n)
    y0 = rng.standard_normal(n)
    sys = const_system(A, lambda t, y: b)
    E = expm_dense(tau * A)
    exact = E @ y0 + np.linalg.solve(A, (E - np.eye(n)) @ b)
    y1 = exp_euler_step(sys, 0.0, tau, y0)
    assert np.max(np.abs(y1 - exact)) <= 1e-12 * max(1.0, np.max(np.abs(exact)))


def test_magnus_reduces_to_exponential_euler():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((5, 5)) - 2 * np.eye(5)
    g = lambda t, y: np.sin(y) + t
    y0 = rng.standard_normal(5)
    const = const_system(A, g)
    varying = SemilinearSystem(lambda t: A, g)
    np.testing.assert_allclose(
        exp_euler_magnus_step(varying, 0.2, 0.1, y0), exp_euler_step(const, 0.2, 0.1, y0), atol=1e-14
    )


def test_magnus_pure_source():
    sys = SemilinearSystem(lambda t: np.zeros((2, 2)), lambda t, y: np.ones(2))
    np.testing.assert_allclose(exp_euler_magnus_step(sys, 0.0, 0.25, np.array([1.0, 2.0])), [1.25, 2.25])


def test_magnus_frozen_scalar():
    sys = SemilinearSystem(lambda t: np.array([[-1.0 - t]]), lambda t, y: np.zeros(1))
    y1 = exp_euler_magnus_step(sys, 0.0, 0.1, np.ones(1))
    assert y1[0] == pytest.approx(np.exp(-0.1), rel=1e-14)
    assert abs(y1[0] - np.exp(-0.105)) < 0.1**2


def _march(sys, tg, y0, stepper):
    y = y0.copy()
    for k in range(tg.m):
        y = stepper(sys, tg.t[k], tg.t[k + 1] - tg.t[k], y)
    return y


def _slope(ms, errs):
    return -np.polyfit(np.log(ms), np.log(errs), 1)[0]


def test_first_order_convergence_constant_linear_part():
    A = np.array([[-2.0, 1.0], [0.5, -3.0]])
    g = lambda t, y: np.array([np.sin(y[1]) + np.cos(t), y[0] ** 2 / 4])
    y0 = np.array([1.0, -0.5])
    T = 1.0
    ref = solve_ivp(lambda t, y: A @ y + g(t, y), (0, T), y0, rtol=1e-12, atol=1e-13, method="DOP853").y[:, -1]
    ms = [100, 200, 400, 800]
    errs = [np.max(np.abs(_march(const_system(A, g), TimeGrid.uniform(T, m), y0, exp_euler_step) - ref))
            for m in ms]
    assert 0.85 <= _slope(ms, errs) <= 1.15


def test_first_order_convergence_magnus():
    A = lambda t: np.array([[-1.0 - t, 0.3], [0.0, -2.0 + np.sin(t)]])
    g = lambda t, y: np.array([np.cos(t) * y[1], 0.2 * y[0] ** 2])
    y0 = np.array([0.8, 1.0])
    T = 1.0
    ref = solve_ivp(lambda t, y: A(t) @ y + g(t, y), (0, T), y0, rtol=1e-12, atol=1e-13, method="DOP853").y[:, -1]
    sys = SemilinearSystem(A, g)
    ms = [100, 200, 400, 800]
    errs = [np.max(np.abs(_march(sys, TimeGrid.uniform(T, m), y0, exp_euler_magnus_step) - ref)) for m in ms]
    assert 0.85 <= _slope(ms, errs) <= 1.15


def test_no_step_size_restriction_on_heat_operator():
    g = build_grid(-1, 1, 500)
    A = 0.01 * neumann_laplacian(g)
    y0 = np.where(np.abs(g.nodes) < 0.3, 1.0, 0.0) + 0.1 * np.cos(50 * g.nodes)
    sys = SemilinearSystem(lambda t: A, lambda t, y: np.zeros_like(y), constant_linear=True, dense_threshold=0)
    y1 = exp_euler_step(sys, 0.0, 10.0, y0)
    assert np.max(np.abs(y1)) <= np.max(np.abs(y0))


def test_time_grid():
    tg = TimeGrid.uniform(2.0, 4)
    np.testing.assert_allclose(tg.t, [0, 0.5, 1, 1.5, 2])
    np.testing.assert_allclose(tg.weights(), [0.25, 0.5, 0.5, 0.5, 0.25])
    assert tg.index(1.5) == 3
    with pytest.raises(ValueError):
        tg.index(1.2)
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 1.0, 1.0]))
