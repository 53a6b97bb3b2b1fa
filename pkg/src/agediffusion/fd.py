"""Finite-difference oracle: exact transport along characteristics, Crank-Nicolson in x.

Each step moves every age row one cell up the age axis and diffuses it with
Crank-Nicolson on the nodes x_i = i dx.  The Neumann data enter through ghost
nodes u_{-1} = u_1 + 2 dx h0 and u_{n+1} = u_{n-1} + 2 dx h1, so that the
outward flux equals h.  Sources are sampled at the characteristic midpoint.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import AgeDiffusionError, AlignmentError, ArgumentError
from .mild import ScenarioData, _full


@dataclass(frozen=True)
class FDGrid:
    n_x: int
    delta_t: float

    def __post_init__(self):
        if self.n_x < 2 or not self.delta_t > 0:
            raise ArgumentError("FD grid needs n_x >= 2 and delta_t > 0")

    @property
    def delta_x(self) -> float:
        return 1.0 / self.n_x

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_x + 1) * self.delta_x


@dataclass
class FDSolution:
    times: np.ndarray
    ages: np.ndarray
    x: np.ndarray
    values: np.ndarray  # (n_times, n_ages, n_x + 1)
    meta: dict = field(default_factory=dict)


def _steps(length: float, dt: float, what: str) -> int:
    n = length / dt
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise AlignmentError(f"{what}={length} is not a multiple of delta_t={dt}")
    return k


def _laplacian_bands(n_x: int, dx: float) -> np.ndarray:
    """Banded storage (upper, diag, lower) of the Neumann Laplacian with folded ghosts."""
    m = n_x + 1
    ab = np.zeros((3, m))
    ab[0, 1:] = 1.0
    ab[1, :] = -2.0
    ab[2, :-1] = 1.0
    ab[0, 1] = 2.0  # row 0, column 1
    ab[2, -2] = 2.0  # row n, column n - 1
    return ab / dx ** 2


def _apply_bands(ab: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = ab[1][:, None] * u
    out[:-1] += ab[0, 1:][:, None] * u[1:]
    out[1:] += ab[2, :-1][:, None] * u[:-1]
    return out


def fd_solve(s: ScenarioData, grid: FDGrid, stride: int = 1) -> FDSolution:
    """Solve on nodes (n dt, j dt, i dx); rows and columns kept every ``stride`` steps."""
    s.validate()
    dt, dx = grid.delta_t, grid.delta_x
    n_t = _steps(s.T, dt, "T")
    n_a = _steps(s.a_max, dt, "a_max")
    x = grid.nodes
    ages = np.arange(n_a + 1) * dt
    times = np.arange(n_t + 1) * dt
    keep_t = np.arange(0, n_t + 1, stride)
    keep_a = np.arange(0, n_a + 1, stride)
    out = np.empty((keep_t.size, keep_a.size, x.size))

    lap = _laplacian_bands(grid.n_x, dx)
    lhs = -0.5 * dt * lap
    lhs[1] += 1.0
    f, g, h0, h1 = s.fn("f"), s.fn("g"), s.fn("h0"), s.fn("h1")

    # rows are stored as (x, age) so one banded solve handles all ages
    u = _full(s.fn("u0"), 0.0, ages[None, :], x[:, None]).copy()
    out[0] = u[:, keep_a].T
    for n in range(n_t):
        t_mid = times[n] + 0.5 * dt
        a_mid = ages[:-1] + 0.5 * dt
        prev = u[:, :-1]
        rhs = prev + 0.5 * dt * _apply_bands(lap, prev)
        rhs += dt * _full(f, t_mid, a_mid[None, :], x[:, None])
        rhs[0] += dt * 2.0 / dx * _full(h0, t_mid, a_mid, 0.0)
        rhs[-1] += dt * 2.0 / dx * _full(h1, t_mid, a_mid, 1.0)
        try:
            moved = scipy.linalg.solve_banded((1, 1), lhs, rhs, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise AgeDiffusionError(f"tridiagonal solve failed at step {n}: {exc}") from None
        u = np.empty_like(u)
        u[:, 1:] = moved
        u[:, 0] = _full(g, times[n + 1], 0.0, x)
        if (n + 1) % stride == 0:
            out[(n + 1) // stride] = u[:, keep_a].T
    meta = {"n_x": grid.n_x, "delta_t": dt, "stride": stride, "scheme": "characteristic Crank-Nicolson"}
    return FDSolution(times[keep_t], ages[keep_a], x, out, meta)


def fd_max_error(sol: FDSolution, exact) -> float:
    ref = _full(exact, sol.times[:, None, None], sol.ages[None, :, None], sol.x[None, None, :])
    return float(np.max(np.abs(sol.values - ref)))


@dataclass(frozen=True)
class Discrepancy:
    max_abs: float
    l2: float
    n_nodes: int


def compare_solutions(mild_sol, fd_sol: FDSolution, sample: float = 0.125) -> Discrepancy:
    """Mild versus FD values at common (t, a) nodes on a ``sample`` lattice and all FD x nodes.

    ``l2`` is the root mean square over the compared values.
    """
    diffs = []
    for i, t in enumerate(fd_sol.times):
        if abs(t / sample - round(t / sample)) > 1e-9:
            continue
        for j, a in enumerate(fd_sol.ages):
            if abs(a / sample - round(a / sample)) > 1e-9:
                continue
            try:
                im, jm = mild_sol.node_index(t, a)
            except AlignmentError:
                continue
            um = mild_sol.field(im, jm).values(fd_sol.x)
            diffs.append(um - fd_sol.values[i, j])
    if not diffs:
        raise AlignmentError("the two solutions share no nodes on the sampling lattice")
    d = np.concatenate(diffs)
    return Discrepancy(float(np.max(np.abs(d))), float(np.sqrt(np.mean(d ** 2))), len(diffs))


@dataclass(frozen=True)
class ConvergenceRecord:
    h: float
    error: float


def convergence_study(s: ScenarioData, levels: int, n_x0: int = 8, sample: float = 0.125) -> list[ConvergenceRecord]:
    """Max errors against ``s.exact`` at nodes on a ``sample`` lattice, halving dx and dt together."""
    if levels < 3:
        raise ArgumentError("need at least 3 levels")
    if s.exact is None:
        raise ArgumentError("scenario has no exact solution attached")
    out = []
    for lev in range(levels):
        n_x = n_x0 * 2 ** lev
        dt = 1.0 / n_x
        stride = max(1, int(round(sample / dt)))
        sol = fd_solve(s, FDGrid(n_x, dt), stride=stride)
        out.append(ConvergenceRecord(dt, fd_max_error(sol, s.fn("exact"))))
    errs = [r.error for r in out]
    if any(b > a for a, b in zip(errs, errs[1:])):
        warnings.warn(f"non-monotone FD error sequence {errs}", RuntimeWarning, stacklevel=2)
    return out


def observed_order(records: list[ConvergenceRecord]) -> float:
    """Least-squares slope of log error against log h."""
    h = np.log([r.h for r in records])
    e = np.log([max(r.error, 1e-300) for r in records])
    return float(np.polyfit(h, e, 1)[0])
