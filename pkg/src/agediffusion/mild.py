"""Mild solutions of the age-structured diffusion problem

    u_t + u_a = u_xx + f        on (0, T) x (0, a_max) x (0, 1)
    grad u . nu = h = (h0, h1)  at x = 0, 1 (outward flux)
    u(t, 0, x) = g(t, x),  u(0, a, x) = u0(a, x)

along characteristics t - a = const, with the diffusion handled in the cosine
basis.  ``solve_grid`` marches the whole grid; ``mild_solution_at`` evaluates
one node from the closed characteristic formula with the graded convolution.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .errors import AlignmentError, ArgumentError, ValidationError
from .expr import Node, evaluate_array, parse
from .neumann import (
    Grading,
    InteriorField,
    cosine_basis,
    cosine_project,
    lift_coefficients,
    lift_values,
    mode_rates,
    projection_rule,
    sb_diamond_with_error,
    trace_source,
)
from .numerics import phi_functions

DATA_FIELDS = ("u0", "f", "g", "h0", "h1")
DataItem = Union[str, float, Node, Callable]

T_EQUALS_A_BRANCH = "initial"


def compile_data(item: DataItem) -> Callable:
    """Vectorised callable (t, a, x) -> array for an expression, number or callable."""
    if isinstance(item, str):
        item = parse(item)
    if isinstance(item, (int, float)):
        value = float(item)
        return lambda t, a, x: np.full(np.broadcast_shapes(np.shape(t), np.shape(a), np.shape(x)), value)
    if isinstance(item, Node):
        return lambda t, a, x, node=item: evaluate_array(node, t=t, a=a, x=x)
    if callable(item):
        return item
    raise ArgumentError(f"cannot interpret data item {item!r}")


@dataclass(frozen=True)
class ScenarioData:
    """Problem data and discretisation; every data item is a function of (t, a, x)."""

    u0: DataItem = 0.0
    f: DataItem = 0.0
    g: DataItem = 0.0
    h0: DataItem = 0.0
    h1: DataItem = 0.0
    p: float = 2.0
    q: float = 2.0
    r: float = 5.0
    T: float = 1.0
    a_max: float = 1.0
    n_a: int = 256
    K: int = 64
    grading: Grading = Grading()
    n_x: int = 200
    delta_t: Optional[float] = None
    exact: Optional[DataItem] = None
    _compiled: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def delta(self) -> float:
        return self.a_max / self.n_a

    @property
    def n_t(self) -> int:
        n = self.T / self.delta
        k = int(round(n))
        if abs(n - k) > 1e-9 * max(1.0, n):
            raise AlignmentError(f"T={self.T} is not a multiple of the step {self.delta}")
        return k

    def violations(self) -> list[str]:
        out = []
        lhs = (1 + self.q) / (2 * self.q) + 1 / self.p
        if not (self.p > 1 and self.q > 1):
            out.append(f"p > 1 and q > 1 (got p={self.p}, q={self.q})")
        if not 1 < lhs:
            out.append(f"1 < (1+q)/(2q) + 1/p (got {lhs:.6g})")
        if not 1 + 1 / self.r < lhs:
            out.append(f"1 + 1/r < (1+q)/(2q) + 1/p (got {1 + 1 / self.r:.6g} vs {lhs:.6g})")
        if not (self.T > 0 and self.a_max > 0 and self.n_a >= 1 and self.K >= 1):
            out.append("T > 0, a_max > 0, n_a >= 1 and K >= 1")
        if self.delta_t is not None and abs(self.delta_t - self.delta) > 1e-12 * self.delta:
            out.append(f"delta_t = delta_a (got {self.delta_t} vs {self.delta})")
        else:
            try:
                self.n_t
            except AlignmentError as exc:
                out.append(str(exc))
        return out

    def validate(self) -> "ScenarioData":
        bad = self.violations()
        if bad:
            raise ValidationError("scenario violates: " + "; ".join(bad))
        return self

    def fn(self, name: str) -> Callable:
        if name not in self._compiled:
            item = self.exact if name == "exact" else getattr(self, name)
            if item is None:
                raise ArgumentError(f"scenario has no {name!r} data")
            self._compiled[name] = compile_data(item)
        return self._compiled[name]

    def keep(self, names) -> "ScenarioData":
        """Copy with every data item outside ``names`` set to zero."""
        names = set(names)
        changes = {k: (getattr(self, k) if k in names else 0.0) for k in DATA_FIELDS}
        return replace(self, exact=None, _compiled={}, **changes)


def linear_combination(alpha: float, s1: ScenarioData, s2: ScenarioData) -> ScenarioData:
    """Scenario with data alpha * s1 + s2 and the discretisation of s1."""
    changes = {}
    for name in DATA_FIELDS:
        f1, f2 = s1.fn(name), s2.fn(name)
        changes[name] = lambda t, a, x, f1=f1, f2=f2: alpha * np.asarray(f1(t, a, x)) + np.asarray(f2(t, a, x))
    return replace(s1, exact=None, _compiled={}, **changes)


@dataclass(frozen=True)
class CharacteristicPoint:
    tau: float
    source: str
    offset: float


def characteristic_decompose(t: float, a: float) -> CharacteristicPoint:
    """Which data line the characteristic through (t, a) starts on, and after how long.

    On the diagonal t = a the initial branch is used.
    """
    if t < 0 or a < 0:
        raise ArgumentError("t and a must be non-negative")
    if t <= a:
        return CharacteristicPoint(float(t), "initial", float(a - t))
    return CharacteristicPoint(float(a), "age_boundary", float(t - a))


def _full(fn, t, a, x):
    t, a, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(a, float), np.asarray(x, float))
    return np.broadcast_to(np.asarray(fn(t, a, x), dtype=float), t.shape)


def project(fn: Callable, t, a, K: int) -> np.ndarray:
    """Cosine coefficients of x -> fn(t, a, x) for arrays t, a of one shape."""
    xq, _ = projection_rule(K)
    t = np.asarray(t, float)[..., None]
    a = np.asarray(a, float)[..., None]
    return cosine_project(_full(fn, t, a, xq), K)


def flux_estimate(fn: Callable, t, a) -> np.ndarray:
    """Outward fluxes (-u_x(0), u_x(1)) by fourth-order one-sided differences."""
    hx = 1e-3
    k = np.arange(5) * hx
    c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * hx)
    t = np.asarray(t, float)[..., None]
    a = np.asarray(a, float)[..., None]
    # both stencils differentiate into the interior, i.e. along the inward normal
    inward0 = _full(fn, t, a, k) @ c
    inward1 = _full(fn, t, a, 1 - k) @ c
    return np.stack([-inward0, -inward1], axis=-1)


def source_coefficients(s: ScenarioData, t, a) -> np.ndarray:
    """f_k + beta_k(h): everything that forces mode k along a characteristic."""
    fk = project(s.fn("f"), t, a, s.K)
    h0 = _full(s.fn("h0"), t, a, 0.0)
    h1 = _full(s.fn("h1"), t, a, 1.0)
    return fk + trace_source(h0, h1, s.K)


@dataclass
class SolutionGrid:
    """Cosine coefficients and outward fluxes of u at (times[i], ages[j])."""

    times: np.ndarray
    ages: np.ndarray
    coeffs: np.ndarray  # (n_times, n_ages, K + 1)
    flux: np.ndarray  # (n_times, n_ages, 2)
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.coeffs.shape[-1] - 1

    def field(self, i: int, j: int) -> InteriorField:
        return InteriorField(self.coeffs[i, j], tuple(float(v) for v in self.flux[i, j]))

    def pointwise(self, x) -> np.ndarray:
        """u at every stored node and each x: shape (n_times, n_ages, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        l0, l1 = lift_coefficients(self.K)
        f0 = self.flux[..., 0:1]
        f1 = self.flux[..., 1:2]
        rem = self.coeffs - f0 * l0 - f1 * l1
        v0, v1 = lift_values(x)
        return rem @ cosine_basis(self.K, x).T + f0 * v0 + f1 * v1

    def node_index(self, t: float, a: float) -> tuple[int, int]:
        i = int(np.argmin(np.abs(self.times - t)))
        j = int(np.argmin(np.abs(self.ages - a)))
        if abs(self.times[i] - t) > 1e-9 or abs(self.ages[j] - a) > 1e-9:
            raise AlignmentError(f"({t}, {a}) is not a stored node")
        return i, j


def _march_weights(D: float, K: int):
    z = -mode_rates(K) * D
    phi1, phi2 = phi_functions(z, 2)
    return np.exp(z), D * (phi1 - phi2), D * phi2


def march(initial: np.ndarray, inflow: Callable, source: Callable, D: float, n_steps: int, store: Callable):
    """Advance coefficient rows along characteristics.

    ``initial`` has shape (n_ages, K + 1) on ages j D.  Row n + 1 is
    e^{-nu D} u^n_j + w0 F(t_n, a_j) + w1 F(t_{n+1}, a_{j+1}) in column j + 1 and
    ``inflow(n + 1)`` in column 0.  ``source(n)`` returns F at time step n for
    every age node.  ``store(n, row)`` receives each row including the first.
    """
    K = initial.shape[-1] - 1
    decay, w0, w1 = _march_weights(D, K)
    row = np.array(initial, dtype=float)
    store(0, row)
    f_prev = source(0)
    for n in range(n_steps):
        f_next = source(n + 1)
        new = np.empty_like(row)
        new[1:] = decay * row[:-1]
        if f_prev is not None:
            new[1:] += w0 * f_prev[:-1] + w1 * f_next[1:]
        new[0] = inflow(n + 1)
        row = new
        store(n + 1, row)
        f_prev = f_next
    return row


def solve_grid(s: ScenarioData, stride: int = 1, threads: int = 1, chunk: int = 16) -> SolutionGrid:
    """Mild solution at every grid node (t_n, a_j) with n, j multiples of ``stride``."""
    s.validate()
    D, K = s.delta, s.K
    n_t, n_a = s.n_t, s.n_a
    ages = np.arange(n_a + 1) * D
    times = np.arange(n_t + 1) * D
    keep_t = np.arange(0, n_t + 1, stride)
    keep_a = np.arange(0, n_a + 1, stride)
    coeffs = np.empty((keep_t.size, keep_a.size, K + 1))
    flux = np.empty((keep_t.size, keep_a.size, 2))
    h0, h1 = s.fn("h0"), s.fn("h1")

    cache: dict[int, np.ndarray] = {}

    def fill(start):
        steps = list(range(start, min(start + chunk, n_t + 1)))
        tt = np.repeat(times[steps], n_a + 1).reshape(len(steps), n_a + 1)
        aa = np.broadcast_to(ages, tt.shape)
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                rows = list(pool.map(lambda k: source_coefficients(s, tt[k], aa[k]), range(len(steps))))
        else:
            rows = [source_coefficients(s, tt[k], aa[k]) for k in range(len(steps))]
        cache.clear()
        cache.update(zip(steps, rows))

    def source(n):
        if n not in cache:
            fill(n)
        return cache[n]

    g_fn = s.fn("g")

    def inflow(n):
        return project(g_fn, times[n], 0.0, K)

    def store(n, row):
        if n % stride:
            return
        i = n // stride
        coeffs[i] = row[keep_a]
        t = times[n]
        fl = np.stack([_full(h0, t, ages[keep_a], 0.0), _full(h1, t, ages[keep_a], 1.0)], axis=-1)
        if n == 0:
            fl = flux_estimate(s.fn("u0"), np.zeros(keep_a.size), ages[keep_a])
        else:
            fl[0] = flux_estimate(g_fn, t, 0.0)
        flux[i] = fl

    initial = project(s.fn("u0"), np.zeros(n_a + 1), ages, K)
    march(initial, inflow, source, D, n_t, store)
    meta = {
        "delta": D,
        "K": K,
        "n_a": n_a,
        "n_t": n_t,
        "stride": stride,
        "t_equals_a_branch": T_EQUALS_A_BRANCH,
        "method": "characteristic marching, exact modal exponentials, linear source interpolation",
    }
    return SolutionGrid(times[keep_t], ages[keep_a], coeffs, flux, meta)


def mild_solution_at(s: ScenarioData, t: float, a: float, grading: Optional[Grading] = None) -> InteriorField:
    """u(t, a, .) from the characteristic formula.

    t <= a: T_B0(t) u0(a - t) + int_0^t T_B(t - s) F(s) ds, F(s) = (h, f)(s, s + a - t)
    t > a:  T_B0(a) g(t - a) + int_0^a T_B(a - s) F(s) ds, F(s) = (h, f)(s + t - a, s)
    """
    if t > s.T + 1e-12 or a > s.a_max + 1e-12:
        raise ArgumentError(f"({t}, {a}) lies outside the scenario domain")
    grading = grading or s.grading
    K = s.K
    cp = characteristic_decompose(t, a)
    if cp.source == "initial":
        start_t, start_a = 0.0, cp.offset
        base = project(s.fn("u0"), 0.0, start_a, K)
    else:
        start_t, start_a = cp.offset, 0.0
        base = project(s.fn("g"), start_t, 0.0, K)
    tau = cp.tau
    xq, _ = projection_rule(K)

    def F(sig):
        ts = start_t + sig
        as_ = start_a + sig
        out = np.empty(sig.shape + (K + 3,))
        out[..., 0] = _full(s.fn("h0"), ts, as_, 0.0)
        out[..., 1] = _full(s.fn("h1"), ts, as_, 1.0)
        out[..., 2:] = project(s.fn("f"), ts, as_, K)
        return out

    coeffs = np.exp(-mode_rates(K) * tau) * base
    if tau > 0:
        vals, _ = sb_diamond_with_error(F, tau, K, grading)
        coeffs = coeffs + vals
        fl = (float(_full(s.fn("h0"), t, a, 0.0)), float(_full(s.fn("h1"), t, a, 1.0)))
    else:
        src = "u0" if cp.source == "initial" else "g"
        fl = tuple(float(v) for v in flux_estimate(s.fn(src), t, a))
    return InteriorField(coeffs, fl)


def grid_max_error(sol: SolutionGrid, exact: Callable, x) -> float:
    """max over stored nodes and x of |u - exact|."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = sol.pointwise(x)
    ref = _full(exact, sol.times[:, None, None], sol.ages[None, :, None], x[None, None, :])
    return float(np.max(np.abs(u - ref)))


def superposition_residual(s: ScenarioData, stride: int = 1) -> float:
    """max |u - (u1 + u2 + u3)| with u1 from (u0, f), u2 from g and u3 from h."""
    whole = solve_grid(s, stride)
    parts = [solve_grid(s.keep(k), stride) for k in (("u0", "f"), ("g",), ("h0", "h1"))]
    c = whole.coeffs - sum(p.coeffs for p in parts)
    fl = whole.flux - sum(p.flux for p in parts)
    return float(max(np.max(np.abs(c)), np.max(np.abs(fl))))
