"""Command-line driver: optimization runs, temporal convergence studies, particle checks.

Exit status 0 on success, 2 on a configuration error, 3 when a solver fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adjoint import BackwardSolveError
from .forward import ForwardSolveError, solve_forward
from .matfun import DEFAULT_DENSE_THRESHOLD, DEFAULT_KRYLOV_TOL, MatrixFunctionError
from .model import ModelSpec, TrajectoryField, discretize
from .models import EXPERIMENT_SIZES, PresetName, UnknownPresetError, make_preset, simulate_particles
from .optimizer import DescentConfig, OptimizationResult, optimize
from .steppers import TimeGrid

logger = logging.getLogger("mfsoc")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
FLOAT_FMT = "%.16e"  # 17 significant digits: lossless for doubles
PARTICLE_BINS = 100
REFERENCE_KINDS = ("plain", "richardson")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = PresetName.SZNAJD.value
    n: Optional[int] = None
    m: Optional[int] = None
    T: Optional[float] = None
    tol: float = 2e-3
    max_iters: int = 200
    lambda_mode: str = "armijo"
    lam: float = 1.0
    krylov_tol: float = DEFAULT_KRYLOV_TOL
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD
    gamma: Optional[float] = None
    out: str = "out"
    seed: int = 0
    m_list: tuple[int, ...] = (300, 400, 500, 600, 700)
    m_ref_factor: int = 4
    reference: str = "richardson"
    N: int = 100_000

    def __post_init__(self):
        try:
            key = PresetName(self.preset)
        except ValueError:
            valid = ", ".join(p.value for p in PresetName)
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {valid}") from None
        n0, m0, T0 = EXPERIMENT_SIZES[key]
        self.n = n0 if self.n is None else self.n
        self.m = m0 if self.m is None else self.m
        self.T = T0 if self.T is None else self.T
        if self.reference not in REFERENCE_KINDS:
            raise ConfigError(f"reference must be one of {', '.join(REFERENCE_KINDS)}, got {self.reference!r}")
        if self.lambda_mode not in ("armijo", "fixed"):
            raise ConfigError(f"lambda_mode must be 'armijo' or 'fixed', got {self.lambda_mode!r}")
        positive = dict(n=self.n, m=self.m, T=self.T, tol=self.tol, max_iters=self.max_iters, lam=self.lam,
                        krylov_tol=self.krylov_tol, N=self.N, m_ref_factor=self.m_ref_factor)
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.n < 3:
            raise ConfigError(f"n must be at least 3, got {self.n}")
        if self.dense_threshold < 0:
            raise ConfigError("dense_threshold must be nonnegative")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        ms = list(self.m_list)
        if not ms or any(m <= 0 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"m_list must be positive and strictly increasing, got {ms}")

    def model(self) -> ModelSpec:
        model = make_preset(self.preset, T=self.T)
        if self.gamma is not None:
            model = dataclasses.replace(model, gamma=self.gamma)
        return model

    def descent(self) -> DescentConfig:
        return DescentConfig(
            tol=self.tol,
            max_iters=self.max_iters,
            lambda0=self.lam,
            fixed_lambda=self.lam if self.lambda_mode == "fixed" else None,
        )


# config-file key -> (RunConfig field, parser)
def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


_KEYS = {
    "preset": ("preset", str),
    "n": ("n", int),
    "m": ("m", int),
    "T": ("T", float),
    "tol": ("tol", float),
    "max_iters": ("max_iters", int),
    "lambda": ("lam", float),
    "lambda_mode": ("lambda_mode", str),
    "krylov_tol": ("krylov_tol", float),
    "dense_threshold": ("dense_threshold", int),
    "gamma": ("gamma", float),
    "out": ("out", str),
    "seed": ("seed", int),
    "m_list": ("m_list", _int_list),
    "m_ref_factor": ("m_ref_factor", int),
    "reference": ("reference", str),
    "N": ("N", int),
}


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        field_name, conv = _KEYS[key]
        try:
            values[field_name] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of 'key = value' lines")
    common.add_argument("--preset", choices=[p.value for p in PresetName])
    common.add_argument("--n", type=int, help="number of grid nodes")
    common.add_argument("--m", type=int, help="number of time steps")
    common.add_argument("--T", type=float, help="time horizon")
    common.add_argument("--tol", type=float, help="stop when |J_new - J_old| < tol")
    common.add_argument("--max-iters", dest="max_iters", type=int)
    common.add_argument("--lambda", dest="lam", type=float, help="initial or fixed step")
    common.add_argument("--lambda-mode", dest="lambda_mode", choices=["armijo", "fixed"])
    common.add_argument("--krylov-tol", dest="krylov_tol", type=float)
    common.add_argument("--dense-threshold", dest="dense_threshold", type=int,
                        help="largest n handled by dense matrix exponentials")
    common.add_argument("--gamma", type=float, help="override the preset control penalty")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mfsoc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="optimize one preset and write CSV trajectories")
    conv = sub.add_parser("converge", parents=[common], help="temporal convergence study")
    conv.add_argument("--m-list", dest="m_list", type=_int_list, help="e.g. 300,400,500")
    conv.add_argument("--m-ref-factor", dest="m_ref_factor", type=int,
                      help="reference run uses this multiple of max(m)")
    conv.add_argument("--reference", choices=REFERENCE_KINDS,
                      help="plain fine run, or first-order Richardson extrapolation from m_ref and m_ref/2")
    part = sub.add_parser("particles", parents=[common], help="particle cross-check of the uncontrolled PDE")
    part.add_argument("--N", type=int, help="number of particles")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flag > config file > preset default."""
    values = read_config_file(args.config) if args.config else {}
    for field_name, _ in _KEYS.values():
        flag = getattr(args, field_name, None)
        if flag is not None:
            values[field_name] = flag
    if getattr(args, "command", None) == "particles":
        # coarser bins than the solver grid keep Monte Carlo noise in the L1 distance low
        values.setdefault("n", PARTICLE_BINS)
    try:
        return RunConfig(**values)
    except UnknownPresetError as exc:
        raise ConfigError(str(exc)) from exc


def write_field_csv(path: Path, field: TrajectoryField) -> None:
    """Long format ``t,x,value``, row-major by time then node."""
    t = np.repeat(field.timegrid.t, field.grid.n)
    x = np.tile(field.grid.nodes, field.timegrid.m + 1)
    data = np.column_stack([t, x, field.values.ravel()])
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header="t,x,value", comments="")


def read_field_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_field_csv`: returns ``(t, x, values)`` with values as (m+1, n)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = np.unique(data[:, 0])
    x = data[: data.shape[0] // t.size, 1]
    return t, x, data[:, 2].reshape(t.size, x.size)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _optimize(cfg: RunConfig, m: int) -> OptimizationResult:
    disc = discretize(cfg.model(), cfg.n, krylov_tol=cfg.krylov_tol, dense_threshold=cfg.dense_threshold)
    return optimize(disc, TimeGrid.uniform(cfg.T, m), cfg.descent())


def cmd_run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    res = _optimize(cfg, cfg.m)
    write_field_csv(out / "density.csv", res.rho)
    write_field_csv(out / "control.csv", res.u)
    write_field_csv(out / "adjoint.csv", res.psi)
    trace = np.column_stack([np.arange(res.J_trace.size), res.J_trace])
    np.savetxt(out / "functional.csv", trace, fmt=["%d", FLOAT_FMT], delimiter=",", header="iter,J", comments="")
    _write_json(out / "run_summary.json", {
        "preset": cfg.preset, "n": cfg.n, "m": cfg.m, "T": cfg.T,
        "iterations": res.iterations, "final_J": res.J, "converged": res.converged,
        "wall_time": res.wall_time, "lambdas": res.lambdas, "message": res.message,
    })
    print(f"{cfg.preset}: J = {res.J:.10g} after {res.iterations} iterations "
          f"({'converged' if res.converged else 'not converged'}, {res.wall_time:.1f} s)")
    return EXIT_OK


@dataclass
class ConvergenceReport:
    rows: list[tuple[int, float, float]]
    slope_rho: Optional[float]
    slope_psi: Optional[float]
    m_ref: int


def loglog_slope(ms: Sequence[int], errs: Sequence[float]) -> Optional[float]:
    """Negative least-squares slope of ``log err`` against ``log m``; None for a single point."""
    if len(ms) < 2:
        return None
    return float(-np.polyfit(np.log(ms), np.log(errs), 1)[0])


def _reference(cfg: RunConfig, m_ref: int) -> tuple[np.ndarray, np.ndarray]:
    ref = _optimize(cfg, m_ref)
    logger.info("reference m=%d: J = %.10g in %d iterations", m_ref, ref.J, ref.iterations)
    if cfg.reference == "plain":
        return ref.rho.final, ref.psi.initial
    # cancel the O(1/m) term of a first-order scheme using a second run on the halved grid
    m_half = m_ref // 2
    half = _optimize(cfg, m_half)
    logger.info("reference m=%d: J = %.10g in %d iterations", m_half, half.J, half.iterations)
    w = m_ref / (m_ref - m_half)
    return (w * ref.rho.final + (1 - w) * half.rho.final,
            w * ref.psi.initial + (1 - w) * half.psi.initial)


def convergence_study(cfg: RunConfig) -> ConvergenceReport:
    """Optimize at every ``m`` and compare ``rho(T)``, ``psi(0)`` with a fine reference at ``m_ref_factor * max(m)``."""
    m_ref = cfg.m_ref_factor * max(cfg.m_list)
    rho_ref, psi_ref = _reference(cfg, m_ref)
    rows = []
    for m in cfg.m_list:
        res = _optimize(cfg, m)
        e_rho = np.max(np.abs(res.rho.final - rho_ref)) / np.max(np.abs(rho_ref))
        e_psi = np.max(np.abs(res.psi.initial - psi_ref)) / np.max(np.abs(psi_ref))
        logger.info("m=%d: J = %.10g, err rho(T) = %.4e, err psi(0) = %.4e", m, res.J, e_rho, e_psi)
        rows.append((m, float(e_rho), float(e_psi)))
    ms = [r[0] for r in rows]
    return ConvergenceReport(
        rows, loglog_slope(ms, [r[1] for r in rows]), loglog_slope(ms, [r[2] for r in rows]), m_ref
    )


def cmd_converge(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = convergence_study(cfg)
    np.savetxt(out / "convergence.csv", np.array(rep.rows), fmt=["%d", FLOAT_FMT, FLOAT_FMT],
               delimiter=",", header="m,err_rho_T,err_psi_0", comments="")
    _write_json(out / "convergence_summary.json", {
        "preset": cfg.preset, "n": cfg.n, "T": cfg.T, "m_ref": rep.m_ref,
        "reference": cfg.reference, "tol": cfg.tol,
        "slope_rho": rep.slope_rho, "slope_psi": rep.slope_psi,
    })
    for m, e_rho, e_psi in rep.rows:
        print(f"m={m:5d}  err_rho_T={e_rho:.4e}  err_psi_0={e_psi:.4e}")
    if rep.slope_rho is not None:
        print(f"slope: rho {rep.slope_rho:.3f}, psi {rep.slope_psi:.3f}")
    return EXIT_OK


def cmd_particles(cfg: RunConfig) -> int:
    model = cfg.model()
    if not model.zero_flux:
        raise ConfigError(f"preset {cfg.preset!r} has flux boundaries; particles only model zero-flux walls")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    disc = discretize(model, cfg.n, krylov_tol=cfg.krylov_tol, dense_threshold=cfg.dense_threshold)
    tg = TimeGrid.uniform(cfg.T, cfg.m)
    pde = solve_forward(disc, tg, np.zeros((cfg.m + 1, cfg.n))).final
    emp, _ = simulate_particles(model, disc.grid, cfg.N, cfg.m, seed=cfg.seed, T=cfg.T)
    l1 = float(disc.weights @ np.abs(emp - pde))
    np.savetxt(out / "particles.csv", np.column_stack([disc.x, emp, pde]), fmt=FLOAT_FMT,
               delimiter=",", header="x,particles,pde", comments="")
    _write_json(out / "particles_summary.json", {
        "preset": cfg.preset, "N": cfg.N, "n": cfg.n, "m": cfg.m, "T": cfg.T, "seed": cfg.seed, "L1": l1,
    })
    print(f"{cfg.preset}: L1(particles, PDE) = {l1:.4e} with N={cfg.N}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "particles": cmd_particles}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"mfsoc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ForwardSolveError, BackwardSolveError, MatrixFunctionError, FloatingPointError) as exc:
        print(f"mfsoc: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
