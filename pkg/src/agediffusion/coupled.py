"""The coupled age-diffusion pair: age transport A and the lifted Laplacian B.

States live in X = head (a Y vector with zero trace) x tail (one Y vector per
age cell).  Both operators act on flat vectors [head, tail.ravel()].  Because
B acts mode by mode and A acts cell by cell, sums of the two reduce to scalar
transport problems per cosine mode, which gives exact pair rules.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .age import AgeGrid, age_handle, age_params, age_resolvent
from .calculus import TimeSampledPath
from .errors import ArgumentError, DomainError
from .neumann import (
    Grading,
    mode_rates,
    sb_diamond_with_error,
    tb_coefficients,
    trace_source,
    y_weights,
)
from .operators import OperatorHandle, OperatorParams


@dataclass(frozen=True)
class CoupledSpace:
    grid: AgeGrid
    K: int
    p: float = 2.0
    q: float = 2.0

    @property
    def fiber(self) -> int:
        return self.K + 3

    @property
    def size(self) -> int:
        return self.fiber * (self.grid.n_a + 1)

    @property
    def weights(self) -> np.ndarray:
        return y_weights(self.K)

    def split(self, v) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ArgumentError(f"expected X vectors of length {self.size}")
        return v[: self.fiber], v[self.fiber :].reshape(self.grid.n_a, self.fiber)

    def join(self, head, tail) -> np.ndarray:
        return np.concatenate([np.asarray(head, float), np.asarray(tail, float).ravel()])

    def norm(self, v) -> float:
        head, tail = self.split(v)
        w = self.weights
        hn = np.sqrt(w @ head ** 2)
        cells = np.sqrt(tail ** 2 @ w)
        return float((hn ** self.p + self.grid.delta_a * np.sum(cells ** self.p)) ** (1 / self.p))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)


def _params(space: CoupledSpace) -> OperatorParams:
    p_star = 2 * space.q / (1 + space.q)
    q_star = p_star / (p_star - 1)
    return OperatorParams(
        omega_A=0.0, M_A=1.0, p=space.p, omega_B=0.0, p_star=p_star, q_star=q_star,
        alpha=0.5 * (1 / q_star + 1 / space.p), eta=0.75,
    )


def lifted_b_handle(space: CoupledSpace) -> OperatorHandle:
    """B(y, psi) = (B'_0 y, a -> B' psi(a)) on flat X vectors."""
    K = space.K
    nu = mode_rates(K)

    def rows(v):
        head, tail = space.split(v)
        return np.vstack([head[None, :], tail])

    def unrows(r):
        return r.ravel().copy()

    def traces_zero(v) -> bool:
        r = rows(v)
        return bool(np.all(np.abs(r[:, :2]) <= 1e-12 * max(1.0, np.max(np.abs(r)))))

    def resolvent(lam, v):
        if not lam > 0:
            raise ArgumentError(f"lambda must be positive, got {lam}")
        r = rows(v)
        if np.any(r[0, :2] != 0):
            raise DomainError("head must have a zero trace slot")
        out = np.zeros_like(r)
        out[:, 2:] = (r[:, 2:] + trace_source(r[:, 0], r[:, 1], K)) / (lam + nu)
        return unrows(out)

    def semigroup(t, v):
        if not traces_zero(v):
            raise DomainError("semigroup acts on vectors with zero trace slots")
        r = rows(v)
        out = np.zeros_like(r)
        out[:, 2:] = np.exp(-nu * t) * r[:, 2:]
        return unrows(out)

    def derivative(t, v):
        if not t > 0:
            return semigroup(0.0, v) if traces_zero(v) else _singular(t)
        r = rows(v)
        out = np.zeros_like(r)
        out[:, 2:] = tb_coefficients(t, r, K)
        return unrows(out)

    def apply(v):
        # zero-flux fields only: B' reduces to the spectral Laplacian
        if not traces_zero(v):
            raise DomainError("direct application needs zero trace slots")
        r = rows(v)
        out = np.zeros_like(r)
        out[:, 2:] = -nu * r[:, 2:]
        return unrows(out)

    return OperatorHandle(
        resolvent=resolvent,
        semigroup_part=semigroup,
        params=_params(space),
        backend_tag="neumann_laplacian",
        norm=space.norm,
        apply=apply,
        derivative_semigroup=derivative,
        in_closure=traces_zero,
        in_domain=traces_zero,
    )


def _singular(t):
    raise ArgumentError(f"derivative semigroup is singular at t={t} for inputs with trace data")


@dataclass(frozen=True)
class ForcingPath:
    """X-valued forcing given pointwise: head(s) -> (n, d), tail(s, a) -> (..., d).

    ``tail`` broadcasts over s and a.  Vectors are evaluated at age cell centres.
    """

    space: CoupledSpace
    head: Callable[[np.ndarray], np.ndarray]
    tail: Callable[[np.ndarray, np.ndarray], np.ndarray]
    horizon: float
    kinks: tuple = ()

    @property
    def value_shape(self) -> tuple:
        return (self.space.size,)

    @property
    def has_tail(self) -> bool:
        return False

    def __call__(self, s) -> np.ndarray:
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        c = self.space.grid.centers
        head = np.asarray(self.head(s_arr), dtype=float).reshape(s_arr.size, self.space.fiber)
        tail = np.asarray(self.tail(s_arr[:, None], c[None, :]), dtype=float)
        tail = np.broadcast_to(tail, (s_arr.size, c.size, self.space.fiber))
        out = np.concatenate([head, tail.reshape(s_arr.size, -1)], axis=1)
        return out if np.ndim(s) else out[0]

    def norm_at(self, s: float) -> float:
        return self.space.norm(self(float(s)))

    @classmethod
    def from_path(cls, space: CoupledSpace, path: TimeSampledPath) -> "ForcingPath":
        """Cell-wise view of a path of flat X vectors."""
        grid = space.grid

        def head(s):
            return np.stack([space.split(v)[0] for v in path(np.atleast_1d(s))])

        def tail(s, a):
            s_b, a_b = np.broadcast_arrays(s, a)
            idx = np.clip((a_b / grid.delta_a).astype(int), 0, grid.n_a - 1)
            out = np.empty(s_b.shape + (space.fiber,))
            for u in np.unique(s_b):
                _, rows = space.split(path(float(u)))
                sel = s_b == u
                out[sel] = rows[idx[sel]]
            return out

        return cls(space, head, tail, path.horizon, tuple(path.kinks))


@dataclass(frozen=True)
class PairRules:
    sum_resolvent: Optional[Callable] = None
    sum_diamond: Optional[Callable] = None
    product_semigroup_residual: Optional[Callable] = None


def coupled_sum_resolvent(space: CoupledSpace, lam: float, x) -> np.ndarray:
    """(lam - A - B)^{-1} x: per mode k, transport at rate lam + nu_k of (y_k, psi_k + beta_k)."""
    head, tail = space.split(x)
    if np.any(head[:2] != 0):
        raise DomainError("head must have a zero trace slot")
    K = space.K
    nu = mode_rates(K)
    src = tail[:, 2:] + trace_source(tail[:, 0], tail[:, 1], K)
    res = age_resolvent(lam + nu, head[2:], src, space.grid)
    out_tail = np.zeros_like(tail)
    out_tail[:, 2:] = res.tail
    return space.join(np.zeros(space.fiber), out_tail)


def coupled_sum_diamond(space: CoupledSpace, f, t: float, grading: Grading = Grading()) -> np.ndarray:
    """(S_{A+B} diamond f)(t) evaluated along characteristics at the age cell centres.

    For an age a >= t the characteristic starts on the initial line and
    collects int_0^t T_B(t - s) h(s, a - t + s) ds.  For a < t it starts at
    age zero at time t - a: the inflow g(t - a) diffuses for a and the tail
    forcing is integrated over the last a time units.
    """
    if not isinstance(f, ForcingPath):
        f = ForcingPath.from_path(space, f)
    K = space.K
    nu = mode_rates(K)
    c = space.grid.centers
    out = np.zeros((c.size, space.fiber))
    if t <= 0:
        return space.join(np.zeros(space.fiber), out)
    old = c >= t
    if np.any(old):
        ages = c[old]

        def F(s):
            return f.tail(s[:, None], ages[None, :] - t + s[:, None])

        vals, _ = sb_diamond_with_error(F, t, K, grading)
        out[old, 2:] = vals
    for j in np.nonzero(~old)[0]:
        a = c[j]
        start = t - a

        def Fj(s, start=start):
            return f.tail(start + s, s)

        vals, _ = sb_diamond_with_error(Fj, a, K, grading)
        inflow = np.asarray(f.head(np.array([start])), dtype=float).reshape(space.fiber)
        out[j, 2:] = vals + np.exp(-nu * a) * inflow[2:]
    return space.join(np.zeros(space.fiber), out)


def coupled_product_semigroup_residual(space: CoupledSpace, t: float, x) -> float:
    """Characteristic march of pure initial data against T_A(t) T_B(t) x."""
    from .mild import march

    head, tail = space.split(x)
    if np.any(head != 0) or np.any(tail[:, :2] != 0):
        raise DomainError("x must have a zero head and zero trace slots")
    grid = space.grid
    n = grid.steps(t)
    final = {}
    march(
        tail[:, 2:],
        lambda k: np.zeros(space.K + 1),
        lambda k: None,
        grid.delta_a,
        n,
        lambda k, row: final.__setitem__("row", row),
    )
    marched = np.zeros_like(tail)
    marched[:, 2:] = final["row"]
    nu = mode_rates(space.K)
    composed = np.zeros_like(tail)
    if n < grid.n_a:
        composed[n:, 2:] = np.exp(-nu * t) * tail[: grid.n_a - n, 2:]
    return space.norm(space.join(np.zeros(space.fiber), marched - composed))


def coupled_handles(space: CoupledSpace) -> tuple[OperatorHandle, OperatorHandle]:
    """(A, B) for the coupled problem, with the exact pair rules attached to A."""
    params = replace(_params(space), **{
        k: getattr(age_params(space.p), k) for k in ("omega_A", "M_A", "eta")
    })
    a = age_handle(space.grid, space.fiber, space.weights, space.p, params)
    b = lifted_b_handle(space)
    rules = PairRules(
        sum_resolvent=lambda lam, x: coupled_sum_resolvent(space, lam, x),
        sum_diamond=lambda f, t: coupled_sum_diamond(space, f, t),
        product_semigroup_residual=lambda t, x: coupled_product_semigroup_residual(space, t, x),
    )
    a = replace(a, norm=space.norm, pair_rules={b.backend_tag: rules})
    return a, b


def smooth_probe(space: CoupledSpace, rng: np.random.Generator, kind: str, modes: int = 4) -> np.ndarray:
    """A seeded X vector with zero-flux finite-mode fields.

    ``kind`` is "head", "tail", "trace" (tail with boundary data) or "mixed".
    """
    d = space.fiber
    a = space.grid.centers
    head = np.zeros(d)
    tail = np.zeros((a.size, d))
    m = min(modes, space.K + 1)
    if kind in ("head", "mixed"):
        head[2 : 2 + m] = rng.standard_normal(m) / (1 + np.arange(m)) ** 2
    if kind in ("tail", "mixed", "trace"):
        rate = rng.uniform(1.0, 3.0)
        freq = rng.uniform(0.0, 3.0)
        prof = np.exp(-rate * a) * np.cos(freq * a)
        tail[:, 2 : 2 + m] = prof[:, None] * (rng.standard_normal(m) / (1 + np.arange(m)) ** 2)
    if kind == "trace":
        tail[:, :2] = np.exp(-2 * a)[:, None] * rng.standard_normal(2)
    return space.join(head, tail)
