"""Integrated semigroups, the diamond convolution and the K_A operator.

Everything here talks to an operator only through an ``OperatorHandle``.
Backends with closed forms plug them in through the optional hooks; the
generic routes use composite Gauss quadrature in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, BoundViolationError, ConvergenceError, DomainError
from .numerics import gauss_legendre
from .operators import OperatorHandle

INTERPOLATIONS = ("piecewise_constant", "piecewise_linear")
GAUSS_ORDER = 8
PANEL_WIDTH = 0.25
BOUND_SLACK = 1e-6


@dataclass(frozen=True)
class TimeSampledPath:
    """A vector-valued function of time on [0, horizon].

    Samples are interpolated between ``times``; beyond the horizon the path is
    zero.  An ``evaluator`` (vectorised: array of s -> array of values) takes
    precedence and defines the path on all of [0, inf).  ``kinks`` lists the
    points where the path may fail to be smooth, so quadrature panels can
    respect them.
    """

    times: np.ndarray
    values: np.ndarray
    interpolation: str = "piecewise_linear"
    evaluator: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    derivative: Optional["TimeSampledPath"] = field(default=None, compare=False)
    kinks: Optional[np.ndarray] = field(default=None, compare=False)
    support: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ArgumentError("times must be a non-empty 1-d array")
        if t[0] != 0.0:
            raise ArgumentError("times must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ArgumentError("times must be strictly increasing")
        if v.shape[0] != t.size:
            raise ArgumentError("values must have one row per time sample")
        if self.interpolation not in INTERPOLATIONS:
            raise ArgumentError(f"interpolation must be one of {INTERPOLATIONS}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if self.evaluator is None:
            object.__setattr__(self, "support", float(t[-1]))
        if self.kinks is None:
            k = np.array([]) if self.evaluator is not None else t
            object.__setattr__(self, "kinks", np.asarray(k, dtype=float))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def value_shape(self) -> tuple:
        return self.values.shape[1:]

    @property
    def has_tail(self) -> bool:
        """True if the path may be nonzero beyond its horizon."""
        return self.support is None

    def __call__(self, s) -> np.ndarray:
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        if self.evaluator is not None:
            out = np.asarray(self.evaluator(s_arr), dtype=float)
            out = out.reshape((s_arr.size,) + self.value_shape)
        else:
            out = self._interpolate(s_arr)
        return out if np.ndim(s) else out[0]

    def _interpolate(self, s: np.ndarray) -> np.ndarray:
        t, v = self.times, self.values
        out = np.zeros((s.size,) + self.value_shape)
        inside = (s >= 0) & (s <= self.horizon)
        if not np.any(inside):
            return out
        si = s[inside]
        idx = np.clip(np.searchsorted(t, si, side="right") - 1, 0, t.size - 1)
        if self.interpolation == "piecewise_constant" or t.size == 1:
            out[inside] = v[idx]
            return out
        idx = np.minimum(idx, t.size - 2)
        w = (si - t[idx]) / (t[idx + 1] - t[idx])
        w = w.reshape((-1,) + (1,) * len(self.value_shape))
        out[inside] = (1 - w) * v[idx] + w * v[idx + 1]
        return out

    @classmethod
    def from_function(
        cls,
        func: Callable[[np.ndarray], np.ndarray],
        horizon: float,
        n_samples: int = 65,
        derivative: Optional["TimeSampledPath"] = None,
    ) -> "TimeSampledPath":
        """Wrap a vectorised closed form; samples are kept for inspection only."""
        t = np.linspace(0.0, horizon, n_samples)
        v = np.asarray(func(t), dtype=float)
        return cls(t, v, "piecewise_linear", evaluator=func, derivative=derivative)

    @classmethod
    def constant(cls, value, horizon: float) -> "TimeSampledPath":
        value = np.asarray(value, dtype=float)

        def ev(s):
            return np.broadcast_to(value, (np.size(s),) + value.shape).copy()

        return cls.from_function(ev, horizon, n_samples=2)

    def is_zero(self) -> bool:
        return self.evaluator is None and not np.any(self.values)

    def _derived(self, evaluator, kinks, support) -> "TimeSampledPath":
        """A path given by a new evaluator, zero beyond ``support`` unless it is None."""
        end = 1.0 if support is None else max(support, 1e-300)
        t = np.linspace(0.0, end, 9)
        v = np.asarray(evaluator(t), dtype=float).reshape((t.size,) + self.value_shape)
        return TimeSampledPath(t, v, "piecewise_linear", evaluator=evaluator, kinks=kinks, support=support)

    def shift(self, s0: float) -> "TimeSampledPath":
        """s -> f(s + s0)."""
        if s0 < 0:
            raise ArgumentError("shift must be non-negative")
        deriv = self.derivative.shift(s0) if self.derivative is not None else None
        kinks = self.kinks - s0
        kinks = kinks[kinks > 0]
        support = None if self.support is None else max(self.support - s0, 0.0)
        out = self._derived(lambda s: self(np.asarray(s) + s0), kinks, support)
        return replace(out, derivative=deriv)

    def reverse(self, t: float) -> "TimeSampledPath":
        """s -> f(t - s) on [0, t]; zero beyond t."""
        kinks = t - self.kinks
        kinks = kinks[(kinks > 0) & (kinks < t)]

        def ev(s):
            s = np.asarray(s, dtype=float)
            out = self(np.clip(t - s, 0.0, None))
            out[(s < 0) | (s > t)] = 0.0
            return out

        return self._derived(ev, kinks, t)

    def scale(self, fn: Callable[[np.ndarray], np.ndarray]) -> "TimeSampledPath":
        """s -> fn(s) f(s) for a smooth scalar function fn."""
        nd = len(self.value_shape)

        def ev(s):
            s = np.asarray(s, dtype=float)
            return np.asarray(fn(s)).reshape((-1,) + (1,) * nd) * self(s)

        return self._derived(ev, self.kinks, self.support)

    def map(self, linear: Callable[[np.ndarray], np.ndarray]) -> "TimeSampledPath":
        """s -> L f(s) for a linear map L acting on one value."""

        def ev(s):
            vals = self(np.asarray(s, dtype=float))
            return np.stack([np.asarray(linear(v), dtype=float) for v in vals])

        t = np.array([0.0, max(self.horizon, 1e-300)])
        v = np.stack([np.asarray(linear(w), dtype=float) for w in self.values[[0, -1]]])
        return TimeSampledPath(t, v, "piecewise_linear", evaluator=ev, kinks=self.kinks, support=self.support)


def _panel_edges(a: float, b: float, kinks=(), width: float = PANEL_WIDTH) -> np.ndarray:
    n = max(1, int(np.ceil((b - a) / width - 1e-12)))
    edges = np.linspace(a, b, n + 1)
    k = np.asarray(kinks, dtype=float)
    k = k[(k > a + 1e-14) & (k < b - 1e-14)]
    if k.size:
        edges = np.unique(np.concatenate([edges, k]))
        edges = edges[np.concatenate([[True], np.diff(edges) > 1e-14])]
    return edges


def quadrature_nodes(a: float, b: float, kinks=(), width: float = PANEL_WIDTH, order: int = GAUSS_ORDER):
    """Composite Gauss nodes and weights on [a, b] with panel edges at the kinks."""
    edges = _panel_edges(a, b, kinks, width)
    x, w = gauss_legendre(order)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + h[:, None] * x[None, :]).ravel()
    weights = (h[:, None] * w[None, :]).ravel()
    return nodes, weights


def _aligned_trapezoid(op: OperatorHandle, fn, a: float, b: float):
    step = op.time_step
    n = int(round((b - a) / step))
    if n < 1 or abs(n * step - (b - a)) > 1e-9 * max(1.0, b - a):
        raise ArgumentError(f"interval [{a}, {b}] is not aligned to the time step {step}")
    s = a + step * np.arange(n + 1)
    vals = [np.asarray(fn(si), dtype=float) for si in s]
    total = 0.5 * (vals[0] + vals[-1]) + sum(vals[1:-1], np.zeros_like(vals[0]))
    return step * total


def time_integral(op: OperatorHandle, fn: Callable[[float], np.ndarray], a: float, b: float, kinks=()):
    """int_a^b fn(s) ds for fn built from the handle's semigroup.

    Handles that only allow aligned times get the trapezoid rule on the
    alignment grid; the others get composite Gauss.
    """
    if b <= a:
        return None
    if op.time_step is not None:
        return _aligned_trapezoid(op, fn, a, b)
    nodes, weights = quadrature_nodes(a, b, kinks)
    total = None
    for s, w in zip(nodes, weights):
        v = w * np.asarray(fn(s), dtype=float)
        total = v if total is None else total + v
    return total


def _default_mu(op: OperatorHandle) -> float:
    return max(0.0, op.params.omega_A) + 1.0


def integrated_semigroup(op: OperatorHandle, t: float, x, mu: Optional[float] = None) -> np.ndarray:
    """S(t)x = mu int_0^t T(s) z ds + z - T(t) z with z = (mu - A)^{-1} x."""
    if t < 0:
        raise ArgumentError("t must be non-negative")
    mu = _default_mu(op) if mu is None else mu
    if not mu > op.params.omega_A:
        raise ArgumentError(f"mu={mu} must exceed omega_A={op.params.omega_A}")
    x = np.asarray(x, dtype=float)
    if t == 0:
        return np.zeros_like(x)
    z = op.resolvent(mu, x)
    if op.semigroup_integral is not None:
        integral = op.semigroup_integral(t, z)
    else:
        integral = time_integral(op, lambda s: op.semigroup_part(s, z), 0.0, t)
    return mu * integral + z - op.semigroup_part(t, z)


def integrated_semigroup_axiom_residuals(op: OperatorHandle, t: float, s: float, x, mu: Optional[float] = None) -> dict:
    """Residuals of the two integrated-semigroup axioms at (t, s).

    ``generator``: S(t)x - t x = A int_0^t S(r) x dr, checked after applying
    (mu - A)^{-1} so that A never has to be applied.
    ``shift``: S(t + s)x - S(s)x - T(s) S(t) x.
    Both are relative to ``max(1, ||x||)``.
    """
    mu = _default_mu(op) if mu is None else mu
    x = np.asarray(x, dtype=float)
    scale = max(1.0, op.norm(x))
    St = integrated_semigroup(op, t, x, mu)
    w = time_integral(op, lambda r: integrated_semigroup(op, r, x, mu), 0.0, t)
    if w is None:
        w = np.zeros_like(x)
    # R(mu) A w = mu R(mu) w - w
    lhs = op.resolvent(mu, St - t * x)
    rhs = mu * op.resolvent(mu, w) - w
    gen = op.norm(lhs - rhs) / scale
    shift = op.semigroup_part(s, St)
    res2 = integrated_semigroup(op, t + s, x, mu) - integrated_semigroup(op, s, x, mu) - shift
    return {"generator": gen, "shift": op.norm(res2) / scale}


@dataclass(frozen=True)
class DiamondResult:
    value: np.ndarray
    quadrature_error_estimate: float


def _convolution(op: OperatorHandle, f: TimeSampledPath, t: float, width: float) -> np.ndarray:
    nodes, weights = quadrature_nodes(0.0, t, f.kinks, width)
    vals = f(nodes)
    total = np.zeros(f.value_shape)
    for s, w, v in zip(nodes, weights, vals):
        total = total + w * op.semigroup_part(t - s, v)
    return total


def _dense_diamond(op: OperatorHandle, f: TimeSampledPath, t: float) -> DiamondResult:
    coarse = _convolution(op, f, t, 2 * PANEL_WIDTH)
    fine = _convolution(op, f, t, PANEL_WIDTH)
    return DiamondResult(fine, float(np.linalg.norm(np.ravel(fine - coarse))))


def _regularised(op: OperatorHandle, f: TimeSampledPath, t: float, lam: float) -> np.ndarray:
    reg = f.map(lambda v: lam * op.resolvent(lam, v))
    return _convolution(op, reg, t, PANEL_WIDTH)


def diamond(
    op: OperatorHandle,
    f: TimeSampledPath,
    t: float,
    lambdas: tuple = (1e2, 1e3, 1e4),
) -> DiamondResult:
    """(S diamond f)(t) = d/dt int_0^t S(t - s) f(s) ds.

    Exact backend forms are used when available.  Dense matrices use the plain
    convolution.  Otherwise the value is the limit of int_0^t T(t - s) lam
    (lam - A)^{-1} f(s) ds, extrapolated in 1/lam.
    """
    if t < 0:
        raise ArgumentError("t must be non-negative")
    if not f.has_tail and t > f.horizon * (1 + 1e-12) + 1e-14:
        raise ArgumentError(f"t={t} exceeds the path horizon {f.horizon}")
    if t == 0 or f.is_zero():
        return DiamondResult(np.zeros(f.value_shape), 0.0)
    if op.diamond_exact is not None:
        value, err = op.diamond_exact(f, t)
        return DiamondResult(np.asarray(value, dtype=float), float(err))
    if op.dense is not None:
        return _dense_diamond(op, f, t)
    lambdas = tuple(sorted(lambdas))
    if any(l <= max(0.0, op.params.omega_A) for l in lambdas):
        raise ArgumentError("regularisation parameters must exceed omega_A")
    vals = [_regularised(op, f, t, lam) for lam in lambdas]
    history = [float(np.linalg.norm(np.ravel(b - a))) for a, b in zip(vals, vals[1:])]
    if any(h2 > h1 for h1, h2 in zip(history, history[1:])):
        raise ConvergenceError("regularised diamond does not converge in lambda", history)
    if len(vals) >= 3:
        # fit V(lam) = V + c1/lam + c2/lam^2 through the last three values
        ls = np.array(lambdas[-3:])
        mat = np.stack([np.ones(3), 1 / ls, 1 / ls ** 2], axis=1)
        flat = np.stack([np.ravel(v) for v in vals[-3:]])
        coef = np.linalg.solve(mat, flat)
        value = coef[0].reshape(f.value_shape)
    else:
        value = vals[-1]
    err = float(np.linalg.norm(np.ravel(value - vals[-1]))) if len(vals) > 1 else float("inf")
    return DiamondResult(value, err)


def diamond_cocycle_residual(op: OperatorHandle, f: TimeSampledPath, s: float, t: float) -> float:
    """||(S diamond f)(t) - T(t - s)(S diamond f)(s) - (S diamond f(. + s))(t - s)||."""
    if s > t:
        raise ArgumentError("need s <= t")
    if s < 0:
        raise ArgumentError("need s >= 0")
    if s == 0 or s == t:
        return 0.0
    whole = diamond(op, f, t).value
    head = op.semigroup_part(t - s, diamond(op, f, s).value)
    rest = diamond(op, f.shift(s), t - s).value
    return op.norm(whole - head - rest)


def weighted_lp_norm(op: OperatorHandle, f: TimeSampledPath, eta: float, p: float, max_units: int = 4000) -> float:
    """(int_0^inf e^{p eta s} ||f(s)||^p ds)^(1/p), truncated where the tail is negligible."""
    total = 0.0
    end = f.horizon if not f.has_tail else float(max_units)
    k = 0
    while k < end:
        b = min(k + 1.0, end)
        nodes, weights = quadrature_nodes(float(k), b, f.kinks)
        vals = f(nodes)
        norms = np.array([op.norm(v) for v in vals])
        piece = float(np.sum(weights * np.exp(p * eta * nodes) * norms ** p))
        total += piece
        k += 1
        if f.has_tail and k >= max(f.horizon, 1.0) and piece <= 1e-32 * max(total, 1e-300):
            break
    return total ** (1 / p)


def _kappa_core(
    op: OperatorHandle, f: TimeSampledPath, eta: float, tol: float, max_steps: int = 100000
) -> np.ndarray:
    prm = op.params
    if not eta > prm.omega_A:
        raise ArgumentError(f"eta={eta} must exceed omega_A={prm.omega_A}")
    p = prm.p
    norm_f = weighted_lp_norm(op, f, eta, p)
    total = np.zeros(f.value_shape)
    if norm_f == 0.0:
        return total
    lead = prm.M_A ** (1 + 1 / p) * norm_f
    rate = np.exp(prm.omega_A - eta)
    history = []
    n = 0
    while True:
        # D(n+1) = T(1) D(n) + (S diamond f(n + .))(1), unrolled as a sum of T(n) pieces
        piece = diamond(op, f.shift(float(n)).reverse(1.0), 1.0).value
        inc = op.semigroup_part(float(n), piece) if n > 0 else piece
        inc_norm = op.norm(inc)
        bound = lead * rate ** n
        history.append(inc_norm)
        if inc_norm > bound * (1 + BOUND_SLACK) + 1e-12:
            raise ConvergenceError(
                f"increment {n} has norm {inc_norm:.3e} above the a-priori bound {bound:.3e}", history
            )
        total = total + inc
        n += 1
        if lead * rate ** n / (1 - rate) <= tol:
            break
        if not f.has_tail and n >= f.horizon:
            break
        if op.nilpotent_after is not None and n >= op.nilpotent_after:
            break
        if n >= max_steps:
            raise ConvergenceError("K_A did not converge within the step budget", history)
    return total


def kappa(op: OperatorHandle, f: TimeSampledPath, eta: Optional[float] = None, tol: float = 1e-10) -> np.ndarray:
    """K_A(f) = lim_{t -> inf} int_0^t T(t - s) ... evaluated as sum_n T(n)(S diamond f(n + 1 - .))(1).

    Equivalently K_A(f) = lim_t (S diamond f(t - .))(t).  The result is checked
    against ||K_A f|| <= M^(1+1/p)/(1 - e^(omega - eta)) ||f||_{L^p_eta}.
    """
    prm = op.params
    eta = prm.eta if eta is None else eta
    if not eta > max(0.0, prm.omega_A):
        raise ArgumentError(f"eta={eta} must exceed max(0, omega_A={prm.omega_A})")
    if not f.has_tail and abs(f.horizon - round(f.horizon)) > 1e-12:
        raise ArgumentError("a path without a tail must have an integer horizon")
    out = _kappa_core(op, f, eta, tol)
    bound = replace(prm, eta=eta).kappa_bound_constant() * weighted_lp_norm(op, f, eta, prm.p)
    got = op.norm(out)
    if got > bound * (1 + BOUND_SLACK) + 1e-12:
        raise BoundViolationError(f"||K_A f|| = {got:.6e} exceeds the bound {bound:.6e}", [got, bound])
    return out


def shifted_handle(op: OperatorHandle, delta: float) -> OperatorHandle:
    """Handle for A - delta."""
    import math

    def resolvent(lam, x):
        return op.resolvent(lam + delta, x)

    def semigroup(t, x):
        return math.exp(-delta * t) * op.semigroup_part(t, x)

    diamond_exact = None
    if op.diamond_exact is not None:

        def diamond_exact(f, t):
            v, e = op.diamond_exact(f.scale(lambda s: np.exp(delta * s)), t)
            return math.exp(-delta * t) * v, math.exp(-delta * t) * e

    deriv = None
    if op.derivative_semigroup is not None:

        def deriv(t, x):
            return math.exp(-delta * t) * op.derivative_semigroup(t, x)

    return replace(
        op,
        resolvent=resolvent,
        semigroup_part=semigroup,
        params=op.params.shifted(delta),
        apply=(lambda x: op.apply(x) - delta * np.asarray(x)) if op.apply is not None else None,
        derivative_semigroup=deriv,
        semigroup_integral=None,
        diamond_exact=diamond_exact,
        dense=op.dense - delta * np.eye(op.dense.shape[0]) if op.dense is not None else None,
        pair_rules={},
    )


def kappa_shift_residual(op: OperatorHandle, f: TimeSampledPath, delta: float, eta: Optional[float] = None, tol: float = 1e-12) -> float:
    """||K_{A - delta}(f) - K_A(e^{-delta .} f)|| for f in L^p_{eta - delta}."""
    eta = op.params.eta if eta is None else eta
    lhs = _kappa_core(shifted_handle(op, delta), f, eta - delta, tol)
    rhs = kappa(op, f.scale(lambda s: np.exp(-delta * s)), eta, tol)
    return op.norm(lhs - rhs)


def kappa_derivative_residual(op: OperatorHandle, f: TimeSampledPath, eta: Optional[float] = None, tol: float = 1e-12) -> float:
    """||K_A(f') + A K_A(f) + f(0)|| for f in W^{1,p}_eta."""
    if f.derivative is None:
        raise ArgumentError("path has no derivative")
    if op.apply is None:
        raise ArgumentError("operator cannot be applied directly")
    k = kappa(op, f, eta, tol)
    kd = kappa(op, f.derivative, eta, tol)
    return op.norm(kd + op.apply(k) + f(0.0))


def kappa_commutation_residual(
    op_a: OperatorHandle, op_b: OperatorHandle, f: TimeSampledPath, eta: Optional[float] = None, tol: float = 1e-12
) -> float:
    """||K_A(B f) - B K_A(f)|| for commuting A and B with B bounded on the values of f."""
    if op_b.apply is None:
        raise ArgumentError("B cannot be applied directly")
    lhs = kappa(op_a, f.map(op_b.apply), eta, tol)
    rhs = op_b.apply(kappa(op_a, f, eta, tol))
    return op_a.norm(lhs - rhs)


def resolvent_exchange_residual(op: OperatorHandle, f: TimeSampledPath, t: float, lam: float) -> float:
    """||(lam - A)^{-1}(S diamond f)(t) - int_0^t T(t - s)(lam - A)^{-1} f(s) ds||."""
    lhs = op.resolvent(lam, diamond(op, f, t).value)
    rhs = diamond(op, f.map(lambda v: op.resolvent(lam, v)), t).value
    return op.norm(lhs - rhs)


def _rule(op_a: OperatorHandle, op_b: OperatorHandle, name: str):
    rules = op_a.pair_rules.get(op_b.backend_tag)
    if rules is None:
        return None
    return getattr(rules, name, None)


def sum_resolvent(op_a: OperatorHandle, op_b: OperatorHandle, lam: float, x, tol: float = 1e-10) -> np.ndarray:
    """(lam - A - B)^{-1} x = K_A(e^{-lam .} T_B(.) x) for commuting A, B."""
    eta = op_a.params.eta
    omega_b = op_b.params.omega_B
    if not lam > eta + omega_b:
        raise ArgumentError(f"lambda={lam} must exceed eta + omega_B = {eta + omega_b}")
    rule = _rule(op_a, op_b, "sum_resolvent")
    if rule is not None:
        return rule(lam, x)
    if op_b.derivative_semigroup is None:
        raise ArgumentError("B has no semigroup to build the resolvent path")
    x = np.asarray(x, dtype=float)

    def ev(s):
        return np.stack([np.exp(-lam * si) * op_b.derivative_semigroup(float(si), x) for si in s])

    path = TimeSampledPath.from_function(ev, 1.0, n_samples=3)
    return kappa(op_a, path, eta, tol)


def sum_residual(op_a: OperatorHandle, op_b: OperatorHandle, lam: float, x, tol: float = 1e-10) -> float:
    """||lam R - A R - B R - x|| with R = (lam - A - B)^{-1} x, relative to max(1, ||x||)."""
    x = np.asarray(x, dtype=float)
    if op_b.in_domain is not None and not op_b.in_domain(x):
        raise DomainError("x must lie in the domain of B")
    rule = _rule(op_a, op_b, "sum_residual")
    if rule is not None:
        return rule(lam, x)
    if op_a.apply is None or op_b.apply is None:
        raise ArgumentError("both operators must be applicable")
    r = sum_resolvent(op_a, op_b, lam, x, tol)
    res = lam * r - op_a.apply(r) - op_b.apply(r) - x
    return op_a.norm(res) / max(1.0, op_a.norm(x))


def weak_solution_residual(
    op_a: OperatorHandle, op_b: OperatorHandle, lam_hat: float, x, y, lam: float, mu: float
) -> float:
    """Weak-solution identity for x with (lam - A - B)x = y in the weak sense.

    (mu + lam_hat - B)^{-1} x + (lam - A)^{-1} x
        = (mu + lam_hat - B)^{-1} (lam - A)^{-1} [y + (lam + mu) x]
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rb = lambda v: op_b.resolvent(mu + lam_hat, v)
    ra = lambda v: op_a.resolvent(lam, v)
    lhs = rb(x) + ra(x)
    rhs = rb(ra(y + (lam + mu) * x))
    return op_a.norm(lhs - rhs)


def product_semigroup_residual(op_a: OperatorHandle, op_b: OperatorHandle, t: float, x) -> float:
    """||T_{A+B}(t) x - T_A(t) T_B(t) x|| for x in the closure of D(A) and D(B)."""
    x = np.asarray(x, dtype=float)
    for op in (op_a, op_b):
        if op.in_closure is not None and not op.in_closure(x):
            raise DomainError("x must lie in the closure of both domains")
    rule = _rule(op_a, op_b, "product_semigroup_residual")
    if rule is not None:
        return rule(t, x)
    if op_a.dense is None or op_b.dense is None:
        raise ArgumentError("no route to the semigroup of A + B for these backends")
    import scipy.linalg

    direct = scipy.linalg.expm(t * (op_a.dense + op_b.dense)) @ x
    composed = op_a.semigroup_part(t, op_b.semigroup_part(t, x))
    return op_a.norm(direct - composed)


def sum_diamond(op_a: OperatorHandle, op_b: OperatorHandle, f, t: float) -> np.ndarray:
    """(S_{A+B} diamond f)(t) = (S_A diamond [s -> T_B(t - s) f(s)])(t)."""
    if t <= 0:
        return np.zeros(f.value_shape)
    rule = _rule(op_a, op_b, "sum_diamond")
    if rule is not None:
        return rule(f, t)
    if op_b.derivative_semigroup is None:
        raise ArgumentError("B has no semigroup")

    def ev(s):
        vals = f(s)
        return np.stack(
            [op_b.derivative_semigroup(max(t - float(si), 0.0), v) for si, v in zip(np.atleast_1d(s), vals)]
        )

    path = TimeSampledPath(
        np.array([0.0, t]),
        np.stack([ev(np.array([0.0]))[0], ev(np.array([t]))[0]]),
        evaluator=ev,
        kinks=f.kinks,
        support=t,
    )
    return diamond(op_a, path, t).value


def sum_integrated_semigroup(op_a: OperatorHandle, op_b: OperatorHandle, t: float, x) -> np.ndarray:
    """S_{A+B}(t) x, the diamond of the constant path x."""
    x = np.asarray(x, dtype=float)
    return sum_diamond(op_a, op_b, TimeSampledPath.constant(x, max(t, 1e-300)), t)


@dataclass(frozen=True)
class RegularityProbe:
    lhs: float
    forcing_norm: float
    r: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.forcing_norm if self.forcing_norm > 0 else 0.0


def regularity_bound_probe(op_a: OperatorHandle, op_b: OperatorHandle, f, t: float, r: float) -> RegularityProbe:
    """||(S_{A+B} diamond f)(t)|| next to ||f||_{L^r(0, t)}.

    Requires 1/r < 1/p + 1/p_star - 1, with p from A and p_star from B.
    """
    p = op_a.params.p
    p_star = op_b.params.p_star
    if not 1 / r < 1 / p + 1 / p_star - 1:
        raise ArgumentError(
            f"1/r < 1/p + 1/p_star - 1 fails: {1 / r:.6g} >= {1 / p + 1 / p_star - 1:.6g}"
        )
    lhs = op_a.norm(sum_diamond(op_a, op_b, f, t))
    norm_fn = getattr(f, "norm_at", None)
    nodes, weights = quadrature_nodes(0.0, t, getattr(f, "kinks", ()))
    if norm_fn is not None:
        norms = np.array([norm_fn(s) for s in nodes])
    else:
        norms = np.array([op_a.norm(v) for v in f(nodes)])
    return RegularityProbe(lhs, float(np.sum(weights * norms ** r) ** (1 / r)), r)
