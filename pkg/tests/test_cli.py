import json

import numpy as np
import pytest

from mfsoc.cli import (
    ConfigError,
    RunConfig,
    build_parser,
    convergence_study,
    loglog_slope,
    main,
    read_config_file,
    read_field_csv,
    resolve_config,
)

SMALL = ["--preset", "sznajd", "--n", "40", "--m", "20", "--T", "1", "--max-iters", "3"]


def test_run_writes_artifacts(tmp_path):
    assert main(["run", *SMALL, "--out", str(tmp_path)]) == 0
    for name in ("density.csv", "control.csv", "adjoint.csv", "functional.csv", "run_summary.json"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "density.csv").read_text().splitlines()[0] == "t,x,value"
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    J = np.loadtxt(tmp_path / "functional.csv", delimiter=",", skiprows=1)
    assert summary["final_J"] == J[-1, 1]
    assert summary["iterations"] == J.shape[0] - 1


def test_csv_round_trip_is_exact(tmp_path):
    from mfsoc.model import discretize
    from mfsoc.models import make_preset
    from mfsoc.optimizer import DescentConfig, optimize
    from mfsoc.steppers import TimeGrid

    main(["run", *SMALL, "--out", str(tmp_path)])
    t, x, values = read_field_csv(tmp_path / "density.csv")
    res = optimize(discretize(make_preset("sznajd", T=1.0), 40), TimeGrid.uniform(1.0, 20),
                   DescentConfig(max_iters=3))
    np.testing.assert_array_equal(values, res.rho.values)
    np.testing.assert_array_equal(x, res.rho.grid.nodes)
    np.testing.assert_array_equal(t, res.rho.timegrid.t)


def test_run_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", *SMALL, "--out", str(a)])
    main(["run", *SMALL, "--out", str(b)])
    for name in ("density.csv", "control.csv", "adjoint.csv", "functional.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_particles_are_byte_identical_for_a_seed(tmp_path):
    args = ["particles", "--preset", "sznajd", "--n", "50", "--m", "20", "--T", "0.5", "--N", "2000", "--seed", "3"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "particles.csv").read_bytes() == (tmp_path / "b" / "particles.csv").read_bytes()


def test_particles_zero_count_is_config_error(tmp_path, capsys):
    assert main(["particles", "--N", "0", "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_particles_reject_flux_preset(tmp_path):
    assert main(["particles", "--preset", "crowd_exit", "--n", "20", "--m", "5", "--out", str(tmp_path)]) == 2


def test_converge_single_m_has_no_slope(tmp_path, capsys):
    args = ["converge", "--preset", "sznajd", "--n", "30", "--T", "0.5", "--m-list", "10",
            "--m-ref-factor", "2", "--max-iters", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = np.loadtxt(tmp_path / "convergence.csv", delimiter=",", skiprows=1, ndmin=2)
    assert rows.shape == (1, 3) and np.all(rows[:, 1:] > 0)
    assert json.loads((tmp_path / "convergence_summary.json").read_text())["slope_rho"] is None


def test_richardson_reference_removes_reference_bias():
    # errors against a plain fine run shrink like 1/m - 1/m_ref, steepening the fit
    kw = dict(preset="sznajd", n=30, T=0.5, tol=1e-7, m_list=(10, 20))
    plain = convergence_study(RunConfig(reference="plain", **kw))
    rich = convergence_study(RunConfig(reference="richardson", **kw))
    assert plain.slope_rho > 1.1
    assert abs(rich.slope_rho - 1) < 0.08 and abs(rich.slope_psi - 1) < 0.08


def test_reference_kind_validated():
    with pytest.raises(ConfigError):
        RunConfig(reference="exact")


def test_loglog_slope():
    ms = [100, 200, 400]
    assert loglog_slope(ms, [1.0 / m for m in ms]) == pytest.approx(1.0)
    assert loglog_slope([100], [0.1]) is None


def test_config_file_and_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# calibration\npreset = crowd_exit\nn = 100  # grid\nm = 50\ngamma = 0.3\nlambda-mode = fixed\n")
    args = build_parser().parse_args(["run", "--config", str(cfg_file), "--m", "70"])
    cfg = resolve_config(args)
    assert cfg.preset == "crowd_exit" and cfg.n == 100 and cfg.m == 70
    assert cfg.lambda_mode == "fixed" and cfg.descent().fixed_lambda == 1.0
    assert cfg.model().gamma == 0.3
    assert cfg.T == 3.0  # preset default


@pytest.mark.parametrize("text", ["n 100\n", "bogus = 1\n", "n = ten\n"])
def test_bad_config_file(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        read_config_file(path)
    assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("kw", [dict(preset="nope"), dict(n=2), dict(m=0), dict(tol=-1.0),
                                dict(lambda_mode="wolfe"), dict(m_list=(400, 300))])
def test_run_config_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_unknown_flag_exits_two():
    with pytest.raises(SystemExit) as err:
        main(["run", "--frobnicate"])
    assert err.value.code == 2


def test_solver_failure_exits_three(tmp_path, capsys, monkeypatch):
    import mfsoc.cli as cli
    from mfsoc.forward import ForwardSolveError

    def boom(*a, **k):
        raise ForwardSolveError("non-finite density", step=4)

    monkeypatch.setattr(cli, "optimize", boom)
    assert main(["run", *SMALL, "--out", str(tmp_path)]) == 3
    assert "step 4" in capsys.readouterr().err
