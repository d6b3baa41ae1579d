import numpy as np
import pytest

from mfsoc.grid import build_grid, trapezoid_weights
from mfsoc.model import ModelSpec, discretize
from mfsoc.models import (
    PresetName,
    UnknownPresetError,
    histogram_density,
    make_preset,
    normalize_density,
    sample_density,
    simulate_particles,
)
from mfsoc.nonlocal_ops import ConstantKernel


def test_sznajd_parameters():
    m = make_preset("sznajd")
    assert m.gamma == 0.5
    assert m.sigma**2 == pytest.approx(0.02)
    assert m.params["x_d"] == -0.5
    assert m.zero_flux and m.terminal_cost is None


def test_hk_parameters():
    m = make_preset(PresetName.HEGSELMANN_KRAUSE)
    assert m.gamma == 2.5 and m.sigma**2 == pytest.approx(0.002) and m.T == 10
    assert m.kernel.kappa == 0.15


def test_crowd_parameters():
    m = make_preset("crowd_exit")
    x = np.linspace(-1, 1, 5)
    rho = np.full(5, 0.3)
    np.testing.assert_allclose(m.selective(0.0, x, rho), 0.7)
    np.testing.assert_allclose(m.selective_drho(0.0, x, rho), -1.0)
    assert (m.beta_a, m.beta_b) == (-10.0, 10.0)
    assert not m.selective_density_independent
    assert m.kernel is None


def test_crowd_running_cost_options():
    x = np.linspace(-1, 1, 5)
    rho = np.ones(5)
    mass = make_preset("crowd_exit")
    np.testing.assert_allclose(mass.running_cost(0.0, x, rho), rho)
    target = make_preset("crowd_exit", running_cost="target", x_d=0.5)
    np.testing.assert_allclose(target.running_cost(0.0, x, rho), (x - 0.5) ** 2)
    with pytest.raises(ValueError):
        make_preset("crowd_exit", running_cost="bogus")


def test_mass_transfer_densities_normalized():
    disc = discretize(make_preset("mass_transfer"), 301)
    target = disc.model.params["target"](disc.x)
    assert abs(disc.mass(disc.initial_density()) - 1) <= 1e-10
    assert abs(disc.mass(target) - 1) <= 1e-10


@pytest.mark.parametrize("name", ["sznajd", "hegselmann_krause", "mass_transfer"])
def test_zero_flux_presets_start_with_unit_mass(name):
    disc = discretize(make_preset(name), 200)
    rho0 = disc.initial_density()
    assert np.all(rho0 >= 0)
    assert disc.mass(rho0) == pytest.approx(1.0, rel=1e-12)


def test_unknown_preset():
    with pytest.raises(UnknownPresetError, match="expected one of"):
        make_preset("voter")


def test_normalize_examples():
    g = build_grid(-1, 1, 51)
    w = trapezoid_weights(g)
    np.testing.assert_allclose(normalize_density(g, w, np.full(51, 2.0)), 0.5)
    once = normalize_density(g, w, np.exp(-g.nodes**2))
    np.testing.assert_allclose(normalize_density(g, w, once), once, rtol=1e-12)
    with pytest.raises(ValueError):
        normalize_density(g, w, np.zeros(51))
    with pytest.raises(ValueError):
        normalize_density(g, w, -np.ones(51))


def test_sampler_reproduces_density():
    g = build_grid(-1, 1, 101)
    rho = np.exp(-8 * (g.nodes - 0.3) ** 2) + 0.2
    x = sample_density(g, rho, 400_000, np.random.default_rng(0))
    assert x.min() >= -1 and x.max() <= 1
    emp = histogram_density(g, x)
    w = trapezoid_weights(g)
    exact = normalize_density(g, w, rho)
    assert w @ np.abs(emp - exact) < 0.03


def test_histogram_has_unit_mass():
    g = build_grid(0, 1, 11)
    x = np.random.default_rng(2).random(1000)
    assert trapezoid_weights(g) @ histogram_density(g, x) == pytest.approx(1.0)


def frozen_model(**kw):
    spec = dict(name="frozen", domain=(-1.0, 1.0), sigma=1e-300, gamma=0.0, T=1.0, rho0=lambda x: 1 - x**2)
    spec.update(kw)
    return ModelSpec(**spec)


def test_frozen_particles_stay_put():
    g = build_grid(-1, 1, 41)
    x0 = np.random.default_rng(1).uniform(-1, 1, 500)
    rho, ens = simulate_particles(frozen_model(), g, 500, 10, positions=x0)
    np.testing.assert_allclose(ens.positions, x0, atol=1e-12)
    np.testing.assert_allclose(rho, histogram_density(g, x0))


def test_two_body_attraction():
    g = build_grid(-1, 1, 41)
    model = frozen_model(kernel=ConstantKernel(1.0))
    _, ens = simulate_particles(model, g, 2, 1000, positions=np.array([-0.5, 0.5]))
    # x' = (y - x) / 2 closes the gap as e^{-t}
    assert ens.positions[0] == pytest.approx(-0.5 * np.exp(-1.0), rel=1e-3)
    assert ens.positions.sum() == pytest.approx(0.0, abs=1e-14)


def test_particles_are_reflected_and_deterministic():
    g = build_grid(-1, 1, 41)
    model = make_preset("sznajd")
    r1, e1 = simulate_particles(model, g, 2000, 50, seed=7, T=1.0)
    r2, e2 = simulate_particles(model, g, 2000, 50, seed=7, T=1.0)
    np.testing.assert_array_equal(e1.positions, e2.positions)
    assert np.all((e1.positions >= -1) & (e1.positions <= 1))
    assert trapezoid_weights(g) @ r1 == pytest.approx(1.0)


@pytest.mark.parametrize("N,m", [(0, 10), (10, 0)])
def test_particle_preconditions(N, m):
    with pytest.raises(ValueError):
        simulate_particles(make_preset("sznajd"), build_grid(-1, 1, 11), N, m)
