"""Command-line runner: scenario files in, CSV slices and reports out.

Exit codes: 0 success, 1 tolerance failure, 2 input or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .errors import AgeDiffusionError, AlignmentError, ArgumentError, ValidationError
from .fd import FDGrid, compare_solutions, fd_max_error, fd_solve
from .fits import FITS, run_fit
from .mild import DATA_FIELDS, T_EQUALS_A_BRANCH, ScenarioData, grid_max_error, solve_grid
from .neumann import Grading
from .suites import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
CSV_HEADER = ("t", "a", "x", "u")
MILD_TOL = 3e-3
FD_TOL = 1e-2
COMPARE_BOUND = 2e-2


@dataclass(frozen=True)
class OutputSettings:
    directory: Path
    slices: tuple
    age_step: float
    x_points: int
    fd_delta_t: float
    compare_bound: float
    compare_sample: float


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        raise ValidationError(f"expected a comma separated list of numbers, got {text!r}") from None


def load_scenario(path) -> tuple[ScenarioData, OutputSettings]:
    """Read a sectioned key/value scenario file and validate it."""
    path = Path(path)
    if not path.is_file():
        raise ArgumentError(f"scenario file not found: {path}")
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cfg.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ArgumentError(f"cannot parse {path}: {exc}") from None

    def get(section, key, conv, default):
        if not cfg.has_option(section, key):
            return default
        raw = cfg.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            raise ValidationError(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}") from None

    problem = {k: get("problem", k, float, d) for k, d in (("p", 2.0), ("q", 2.0), ("r", 5.0), ("T", 1.0), ("a_max", 1.0))}
    n_a = get("grids", "n_a", int, 256)
    n_x = get("grids", "n_x", int, 200)
    grading = Grading(get("grids", "kappa", float, 2.0), get("grids", "n_cells", int, 64))
    data = {k: cfg.get("data", k) for k in DATA_FIELDS if cfg.has_option("data", k)}
    exact = cfg.get("data", "exact") if cfg.has_option("data", "exact") else None
    scenario = ScenarioData(
        **data, **problem, n_a=n_a, K=get("grids", "K", int, 64), grading=grading, n_x=n_x,
        delta_t=get("grids", "delta_t", float, None), exact=exact,
    )
    scenario.validate()
    for name in DATA_FIELDS + (("exact",) if exact else ()):
        scenario.fn(name)  # surfaces syntax errors at load time
    settings = OutputSettings(
        directory=Path(cfg.get("output", "directory", fallback="out")),
        slices=_floats(cfg.get("output", "slices", fallback=str(scenario.T))),
        age_step=get("output", "age_step", float, 0.125),
        x_points=get("output", "x_points", int, 11),
        fd_delta_t=get("grids", "fd_delta_t", float, 1.0 / n_x),
        compare_bound=get("compare", "bound", float, COMPARE_BOUND),
        compare_sample=get("compare", "sample", float, 0.125),
    )
    if settings.x_points < 2:
        raise ValidationError("[output] x_points must be at least 2")
    for t in settings.slices:
        if not 0 <= t <= scenario.T + 1e-12:
            raise ValidationError(f"slice t={t} lies outside [0, T={scenario.T}]")
    return scenario, settings


def _steps(value: float, step: float, what: str) -> int:
    n = value / step
    k = int(round(n))
    if abs(n - k) > 1e-9 * max(1.0, n):
        raise AlignmentError(f"{what}={value} is not a multiple of the grid step {step}")
    return k


def _stride(settings: OutputSettings, step: float) -> int:
    counts = [_steps(t, step, "slice") for t in settings.slices]
    counts.append(_steps(settings.age_step, step, "age_step"))
    return max(1, math.gcd(*counts))


def _sample_indices(stored: np.ndarray, wanted: Sequence[float]) -> list[int]:
    out = []
    for w in wanted:
        i = int(np.argmin(np.abs(stored - w)))
        if abs(stored[i] - w) > 1e-9:
            raise AlignmentError(f"{w} is not a stored grid value")
        out.append(i)
    return out


def _age_samples(settings: OutputSettings, a_max: float) -> np.ndarray:
    n = int(math.floor(a_max / settings.age_step + 1e-9))
    return np.arange(n + 1) * settings.age_step


def write_csv(path: Path, times, ages, x, values) -> None:
    """values[i, j, k] = u(times[i], ages[j], x[k]); rows ordered by t, then a, then x."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, t in enumerate(times):
            for j, a in enumerate(ages):
                for k, xv in enumerate(x):
                    w.writerow((repr(float(t)), repr(float(a)), repr(float(xv)), repr(float(values[i, j, k]))))


def _versions() -> dict:
    return {"agediffusion": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_meta(path: Path, payload: dict) -> None:
    payload = {**payload, "versions": _versions(), "t_equals_a_branch": T_EQUALS_A_BRANCH}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _grid_meta(s: ScenarioData) -> dict:
    return {
        "T": s.T, "a_max": s.a_max, "n_a": s.n_a, "delta": s.delta, "K": s.K,
        "kappa": s.grading.kappa, "n_cells": s.grading.n_cells, "p": s.p, "q": s.q, "r": s.r,
    }


def _mild(s: ScenarioData, settings: OutputSettings, threads: int):
    sol = solve_grid(s, stride=_stride(settings, s.delta), threads=threads)
    ages = _age_samples(settings, s.a_max)
    ti = _sample_indices(sol.times, settings.slices)
    aj = _sample_indices(sol.ages, ages)
    x = np.arange(settings.x_points) / (settings.x_points - 1)
    values = sol.pointwise(x)[np.ix_(ti, aj)]
    return sol, values, x, ages


def _fd(s: ScenarioData, settings: OutputSettings):
    grid = FDGrid(s.n_x, settings.fd_delta_t)
    if s.n_x % (settings.x_points - 1):
        raise AlignmentError(f"n_x={s.n_x} is not a multiple of x_points - 1 = {settings.x_points - 1}")
    sol = fd_solve(s, grid, stride=_stride(settings, grid.delta_t))
    ages = _age_samples(settings, s.a_max)
    ti = _sample_indices(sol.times, settings.slices)
    aj = _sample_indices(sol.ages, ages)
    x = np.arange(settings.x_points) / (settings.x_points - 1)
    xk = _sample_indices(sol.x, x)
    values = sol.values[np.ix_(ti, aj, xk)]
    return sol, values, x, ages, grid


def cmd_solve(args) -> int:
    s, settings = load_scenario(args.scenario)
    out = Path(args.out) if args.out else settings.directory
    sol, values, x, ages = _mild(s, settings, args.threads)
    write_csv(out / "solve.csv", settings.slices, ages, x, values)
    meta = {"command": "solve", "grid": _grid_meta(s), "method": sol.meta["method"],
            "tolerances": {"mild_max_error": MILD_TOL * args.tol_scale}}
    if s.exact is not None:
        meta["max_error_vs_exact"] = grid_max_error(sol, s.fn("exact"), x)
    write_meta(out / "solve.meta.json", meta)
    print(f"wrote {out / 'solve.csv'} ({len(settings.slices) * len(ages) * len(x)} rows)")
    return EXIT_OK


def cmd_oracle(args) -> int:
    s, settings = load_scenario(args.scenario)
    out = Path(args.out) if args.out else settings.directory
    sol, values, x, ages, grid = _fd(s, settings)
    write_csv(out / "oracle.csv", settings.slices, ages, x, values)
    meta = {"command": "oracle", "grid": {**_grid_meta(s), "n_x": grid.n_x, "fd_delta_t": grid.delta_t},
            "method": sol.meta["scheme"], "tolerances": {"fd_max_error": FD_TOL * args.tol_scale}}
    if s.exact is not None:
        meta["max_error_vs_exact"] = fd_max_error(sol, s.fn("exact"))
    write_meta(out / "oracle.meta.json", meta)
    print(f"wrote {out / 'oracle.csv'} ({len(settings.slices) * len(ages) * len(x)} rows)")
    return EXIT_OK


def cmd_compare(args) -> int:
    s, settings = load_scenario(args.scenario)
    out = Path(args.out) if args.out else settings.directory
    fd_grid = FDGrid(s.n_x, settings.fd_delta_t)
    step = math.gcd(_steps(settings.compare_sample, s.delta, "sample"), _steps(s.T, s.delta, "T"))
    mild = solve_grid(s, stride=step, threads=args.threads)
    fd_step = math.gcd(_steps(settings.compare_sample, fd_grid.delta_t, "sample"), _steps(s.T, fd_grid.delta_t, "T"))
    fd = fd_solve(s, fd_grid, stride=fd_step)
    d = compare_solutions(mild, fd, settings.compare_sample)
    bound = settings.compare_bound * args.tol_scale
    rows = [("mild vs fd, max", d.max_abs, bound), ("mild vs fd, L2 (rms)", d.l2, bound)]
    if s.exact is not None:
        rows.append(("mild vs exact, max", grid_max_error(mild, s.fn("exact"), fd.x), MILD_TOL * args.tol_scale))
        rows.append(("fd vs exact, max", fd_max_error(fd, s.fn("exact")), FD_TOL * args.tol_scale))
    print(f"{'metric':<24} {'value':>12} {'bound':>10}  pass")
    ok = True
    for name, value, tol in rows:
        passed = value <= tol
        ok &= passed
        print(f"{name:<24} {value:12.4e} {tol:10.2e}  {'PASS' if passed else 'FAIL'}")
    out.mkdir(parents=True, exist_ok=True)
    write_meta(out / "compare.meta.json", {
        "command": "compare", "grid": {**_grid_meta(s), "n_x": fd_grid.n_x, "fd_delta_t": fd_grid.delta_t},
        "results": {name: value for name, value, _ in rows}, "tolerances": {name: tol for name, _, tol in rows},
        "nodes_compared": d.n_nodes,
    })
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(args) -> int:
    rows = run_suite(args.suite)
    width = max(len(r.prop) for r in rows)
    iwidth = max(len(r.identity) for r in rows)
    print(f"{'property':<{width}}  {'identity':<{iwidth}}  {'residual':>10}  {'tolerance':>9}  pass")
    ok = True
    for r in rows:
        tol = r.tolerance * args.tol_scale
        passed = bool(np.isfinite(r.residual) and r.residual <= tol)
        ok &= passed
        print(f"{r.prop:<{width}}  {r.identity:<{iwidth}}  {r.residual:10.3e}  {tol:9.2e}  {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_fit(args) -> int:
    rep = run_fit(args.target)
    band = rep.band * args.tol_scale
    passed = abs(rep.value - rep.expected) <= band
    print(f"target {rep.target}: fitted {rep.value:+.4f}, expected {rep.expected:+.2f} +/- {band:.3f}: {'PASS' if passed else 'FAIL'}")
    if "slope" in rep.detail:
        print(f"  resolvent norm slope {rep.detail['slope']:+.4f}")
    return EXIT_OK if passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agediffusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    common.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance by S")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in (
        ("solve", cmd_solve, "mild solution slices as CSV"),
        ("oracle", cmd_oracle, "finite-difference slices as CSV"),
        ("compare", cmd_compare, "mild versus finite-difference discrepancy table"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--scenario", required=True, help="scenario file")
        p.add_argument("--out", default=None, help="output directory (overrides [output] directory)")
        p.set_defaults(func=fn)
    p = sub.add_parser("verify", parents=[common], help="run a verification suite")
    p.add_argument("suite", help=f"one of {', '.join(list(SUITES) + ['all'])}")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("fit", parents=[common], help="run an exponent fit")
    p.add_argument("target", help=f"one of {', '.join(FITS)}")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    if args.threads < 1 or not args.tol_scale > 0:
        print("error: --threads must be >= 1 and --tol-scale > 0", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AgeDiffusionError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
