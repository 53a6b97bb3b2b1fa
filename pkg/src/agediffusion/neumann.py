"""Neumann Laplacian on (0, 1) in the cosine basis cos(k pi x).

A field is stored by its cosine coefficients.  When its outward boundary flux
is known, the flux is kept alongside so that pointwise values can be rebuilt
from the fast-decaying zero-flux remainder plus the two polynomial lifts
``(1 - x)^2 / 2`` and ``x^2 / 2``.  Without that, the cosine series of a field
with nonzero flux converges only like 1/K at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, ConvergenceError, DomainError
from .numerics import phi_functions
from .operators import OperatorHandle, OperatorParams, loglog_fit

DEFAULT_K = 128


def mode_rates(K: int) -> np.ndarray:
    """Eigenvalues (k pi)^2 of the negative Neumann Laplacian, k = 0..K."""
    k = np.arange(K + 1)
    return (k * np.pi) ** 2


def cos_norm(K: int) -> np.ndarray:
    """Projection normalisation: 1 for k = 0, 2 otherwise."""
    w = np.full(K + 1, 2.0)
    w[0] = 1.0
    return w


def parseval_weights(K: int) -> np.ndarray:
    """||sum c_k cos(k pi x)||_2^2 = sum weights * c^2."""
    w = np.full(K + 1, 0.5)
    w[0] = 1.0
    return w


def alternating(K: int) -> np.ndarray:
    return np.where(np.arange(K + 1) % 2 == 0, 1.0, -1.0)


def trace_source(y0, y1, K: int) -> np.ndarray:
    """Cosine coefficients through which flux data (y0, y1) enter each mode.

    Broadcasts over leading axes of y0, y1.
    """
    y0 = np.asarray(y0, dtype=float)[..., None]
    y1 = np.asarray(y1, dtype=float)[..., None]
    return cos_norm(K) * (y0 + alternating(K) * y1)


@lru_cache(maxsize=64)
def lift_coefficients(K: int) -> tuple[np.ndarray, np.ndarray]:
    """Cosine coefficients of (1 - x)^2 / 2 and x^2 / 2."""
    nu = mode_rates(K)
    l0 = np.empty(K + 1)
    l0[0] = 1.0 / 6.0
    l0[1:] = 2.0 / nu[1:]
    l1 = alternating(K) * l0
    return l0, l1


def lift_values(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return (1 - x) ** 2 / 2, x ** 2 / 2


def corrector_coefficients(lam: float, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Cosine coefficients of the flux correctors at x = 0 and x = 1.

    The correctors cosh(s(1 - x)) / (s sinh s) and cosh(s x) / (s sinh s),
    s = sqrt(lam), solve lam w - w'' = 0 with unit outward flux on one end.
    """
    base = cos_norm(K) / (lam + mode_rates(K))
    return base, alternating(K) * base


def corrector_values(lam: float, x) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise corrector values in overflow-free exponential form."""
    s = np.sqrt(lam)
    x = np.asarray(x, dtype=float)
    denom = s * (-np.expm1(-2 * s))

    def c(z):
        return (np.exp(-s * z) + np.exp(-s * (2 - z))) / denom

    return c(x), c(1 - x)


@lru_cache(maxsize=32)
def projection_rule(K: int, n: Optional[int] = None):
    """Gauss-Legendre nodes on (0, 1) and the matrix mapping nodal values to coefficients."""
    n = n or max(4 * K, 64)
    z, w = np.polynomial.legendre.leggauss(n)
    x = (z + 1) / 2
    w = w / 2
    k = np.arange(K + 1)
    proj = (cos_norm(K)[:, None] * np.cos(np.pi * np.outer(k, x)) * w[None, :]).T
    return x, proj


def cosine_project(values_at_nodes: np.ndarray, K: int, n: Optional[int] = None) -> np.ndarray:
    """Coefficients from values on ``projection_rule(K, n)`` nodes (last axis)."""
    _, proj = projection_rule(K, n)
    return np.asarray(values_at_nodes) @ proj


def cosine_basis(K: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.cos(np.pi * np.multiply.outer(x, np.arange(K + 1)))


@dataclass(frozen=True)
class TracePair:
    y0: float = 0.0
    y1: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.y0) and np.isfinite(self.y1)):
            raise ArgumentError("trace data must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.y0, self.y1], dtype=float)

    def norm(self) -> float:
        return float(np.hypot(self.y0, self.y1))


@dataclass(frozen=True)
class InteriorField:
    """Cosine coefficients c_0..c_K, with the outward flux when it is known."""

    coeffs: np.ndarray
    flux: Optional[tuple[float, float]] = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ArgumentError("coefficients must be a non-empty 1-D array")
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return self.coeffs.size - 1

    @classmethod
    def zeros(cls, K: int) -> "InteriorField":
        return cls(np.zeros(K + 1), (0.0, 0.0))

    @classmethod
    def mode(cls, k: int, K: int, amplitude: float = 1.0) -> "InteriorField":
        c = np.zeros(K + 1)
        c[k] = amplitude
        return cls(c, (0.0, 0.0))

    @classmethod
    def from_function(
        cls, func: Callable, K: int, flux: Optional[tuple[float, float]] = None
    ) -> "InteriorField":
        x, _ = projection_rule(K)
        return cls(cosine_project(np.asarray(func(x), dtype=float), K), flux)

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.flux is None or self.flux == (0.0, 0.0):
            return cosine_basis(self.K, x) @ self.coeffs
        l0, l1 = lift_coefficients(self.K)
        rem = self.coeffs - self.flux[0] * l0 - self.flux[1] * l1
        v0, v1 = lift_values(x)
        return cosine_basis(self.K, x) @ rem + self.flux[0] * v0 + self.flux[1] * v1

    def l2_norm(self) -> float:
        return float(np.sqrt(parseval_weights(self.K) @ self.coeffs ** 2))

    def lq_norm(self, q: float = 2.0) -> float:
        """L^q norm; Parseval for q = 2, nodal quadrature on a 4K-point grid otherwise."""
        if q == 2:
            return self.l2_norm()
        x, _ = projection_rule(self.K)
        _, w = np.polynomial.legendre.leggauss(x.size)
        return float((w / 2 @ np.abs(self.values(x)) ** q) ** (1 / q))

    def tail_ratio(self) -> float:
        c = np.abs(self.coeffs)
        top = np.max(c)
        if top == 0 or self.K < 1:
            return 0.0
        return float((c[-1] + c[-2]) / top)


@dataclass(frozen=True)
class YElement:
    trace: TracePair
    field: InteriorField

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.trace.as_array(), self.field.coeffs])

    @classmethod
    def from_vector(cls, v) -> "YElement":
        v = np.asarray(v, dtype=float)
        return cls(TracePair(v[0], v[1]), InteriorField(v[2:]))

    def norm(self) -> float:
        return float(np.sqrt(self.trace.norm() ** 2 + self.field.l2_norm() ** 2))


def y_weights(K: int) -> np.ndarray:
    """Diagonal quadratic form of the Y norm on vectors [y0, y1, c_0..c_K]."""
    return np.concatenate([[1.0, 1.0], parseval_weights(K)])


def y_norm(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(y_weights(v.shape[-1] - 3) @ v ** 2))


def bprime_resolvent(lam: float, y: TracePair, psi: InteriorField) -> InteriorField:
    """Solve lam w - w'' = psi on (0, 1) with outward flux (y0, y1)."""
    if not lam > 0:
        raise ArgumentError(f"lambda must be positive, got {lam}")
    K = psi.K
    beta = trace_source(y.y0, y.y1, K)
    return InteriorField((psi.coeffs + beta) / (lam + mode_rates(K)), (float(y.y0), float(y.y1)))


def bprime_apply(w: InteriorField) -> YElement:
    """B'(0, w) = (-grad w . nu, w''), using the recorded flux of w."""
    K = w.K
    f0, f1 = w.flux if w.flux is not None else (0.0, 0.0)
    l0, l1 = lift_coefficients(K)
    rem = w.coeffs - f0 * l0 - f1 * l1
    lap = -mode_rates(K) * rem
    lap[0] += f0 + f1
    return YElement(TracePair(-f0, -f1), InteriorField(lap))


def b0_semigroup(t: float, psi: InteriorField) -> InteriorField:
    if t < 0:
        raise ArgumentError("time must be non-negative")
    if t == 0:
        return psi
    return InteriorField(np.exp(-mode_rates(psi.K) * t) * psi.coeffs, (0.0, 0.0))


def tb_semigroup(t: float, u: YElement, lam: float = 1.0) -> InteriorField:
    """(lam - B'_0) T_{B'_0}(t) (lam - B')^{-1} u; independent of lam."""
    if not t > 0:
        raise ArgumentError("derivative semigroup is singular at t = 0; need t > 0")
    w = bprime_resolvent(lam, u.trace, u.field)
    decayed = b0_semigroup(t, w)
    return InteriorField((lam + mode_rates(w.K)) * decayed.coeffs, (0.0, 0.0))


def tb_coefficients(t, vec, K: int) -> np.ndarray:
    """Vectorised T_B(t) on stacked Y vectors [..., 2 + K + 1] -> coefficients."""
    vec = np.asarray(vec, dtype=float)
    src = vec[..., 2:] + trace_source(vec[..., 0], vec[..., 1], K)
    return np.exp(-mode_rates(K) * np.asarray(t, dtype=float)[..., None]) * src


@dataclass(frozen=True)
class Grading:
    kappa: float = 2.0
    n_cells: int = 64

    def __post_init__(self):
        if self.kappa < 1 or self.n_cells < 8:
            raise ArgumentError("grading needs kappa >= 1 and n_cells >= 8")

    def edges(self, t: float) -> np.ndarray:
        j = np.arange(self.n_cells + 1)
        e = t * (1 - (1 - j / self.n_cells) ** self.kappa)
        e[-1] = t
        return e

    def refined(self) -> "Grading":
        return Grading(self.kappa, 2 * self.n_cells)


@lru_cache(maxsize=16)
def _cell_rule(nodes: int):
    z, _ = np.polynomial.legendre.leggauss(nodes)
    theta = (z + 1) / 2
    vinv = np.linalg.inv(np.vander(theta, nodes, increasing=True))
    fac = np.array([factorial(i) for i in range(nodes)], dtype=float)
    return theta, vinv, fac


def modal_convolution(F: Callable, t: float, K: int, grading: Grading, nodes: int = 3) -> np.ndarray:
    """Coefficients of int_0^t T_B(t - s) F(s) ds.

    ``F`` maps an array of times (n,) to stacked Y vectors of shape
    (n, ..., 2 + K + 1).  Inside each graded cell F is replaced by its
    Lagrange interpolant at Gauss points and the exponential factor of every
    mode is integrated exactly.
    """
    if t == 0:
        return None
    edges = grading.edges(t)
    h = np.diff(edges)
    theta, vinv, fac = _cell_rule(nodes)
    s = edges[:-1, None] + h[:, None] * theta[None, :]
    vals = np.asarray(F(s.ravel()), dtype=float)
    batch = vals.shape[1:-1]
    vals = vals.reshape((h.size, nodes) + batch + (K + 3,))
    src = vals[..., 2:] + trace_source(vals[..., 0], vals[..., 1], K)
    nu = mode_rates(K)
    z = -np.multiply.outer(h, nu)  # (cells, K+1)
    phis = phi_functions(z, nodes)
    # weight of node m in each cell and mode: h * sum_i i! phi_{i+1}(z) vinv[i, m]
    mono = np.stack([fac[i] * phis[i] for i in range(nodes)], axis=0)  # (i, cells, K+1)
    w = np.einsum("im,ick->cmk", vinv, mono) * h[:, None, None]
    decay = np.exp(-np.multiply.outer(t - edges[1:], nu))  # (cells, K+1)
    w = w * decay[:, None, :]
    extra = (1,) * len(batch)
    w = w.reshape((h.size, nodes) + extra + (K + 1,))
    return np.sum(w * src, axis=(0, 1))


def sb_diamond_with_error(
    F: Callable, t: float, K: int, grading: Grading = Grading(), nodes: int = 3, tol: float = 1e-5
) -> tuple[np.ndarray, float]:
    """Modal convolution on ``grading`` and its refinement; returns (fine, |fine - coarse|)."""
    if t < 0:
        raise ArgumentError("t must be non-negative")
    if t == 0:
        return np.zeros(K + 1), 0.0
    coarse = modal_convolution(F, t, K, grading, nodes)
    fine = modal_convolution(F, t, K, grading.refined(), nodes)
    w = parseval_weights(K)
    err = float(np.max(np.sqrt(np.sum(w * (fine - coarse) ** 2, axis=-1))))
    scale = max(1.0, float(np.max(np.sqrt(np.sum(w * fine ** 2, axis=-1)))))
    if not np.all(np.isfinite(fine)) or err > tol * scale:
        raise ConvergenceError(
            f"convolution quadrature did not settle at t={t}: refinement change {err:.3e}",
            history=[err],
        )
    return fine, err


def sb_diamond(F: Callable, t: float, grading: Grading = Grading(), K: Optional[int] = None, nodes: int = 3) -> InteriorField:
    """(S_B' diamond F)(t) = int_0^t T_B(t - s) F(s) ds as a field.

    ``F`` maps times to Y vectors [y0, y1, c_0..c_K].  The flux of the result is
    the trace datum of F at time t.
    """
    if K is None:
        K = np.asarray(F(np.array([0.0]))).shape[-1] - 3
    coeffs, _ = sb_diamond_with_error(F, t, K, grading, nodes)
    end = np.asarray(F(np.array([t])), dtype=float)[0]
    return InteriorField(coeffs, (float(end[0]), float(end[1])))


def singularity_exponent_fit(direction: YElement, t_grid, K: int = 4096) -> float:
    """Log-log slope of ||T_B(t) direction|| over ``t_grid``.

    The direction's field is zero-padded to K modes so that the fit resolves
    the smallest times.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 4:
        raise ArgumentError("need at least 4 time values")
    if np.any(t_grid <= 0) or np.any(t_grid > 0.1 + 1e-12):
        raise ArgumentError("time grid must lie in (0, 0.1]")
    c = np.zeros(max(K, direction.field.K) + 1)
    c[: direction.field.K + 1] = direction.field.coeffs
    u = YElement(direction.trace, InteriorField(c))
    norms = [tb_semigroup(t, u).l2_norm() for t in t_grid]
    return loglog_fit(t_grid, norms)[0]


def trace_probes(K: int, n: int = 64, seed: int = 7) -> list[np.ndarray]:
    """Seeded Y vectors with unit trace data and zero field."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        ang = rng.uniform(0, 2 * np.pi)
        v = np.zeros(K + 3)
        v[0], v[1] = np.cos(ang), np.sin(ang)
        out.append(v)
    return out


def interior_probes(K: int, n: int = 64, seed: int = 11, modes: int = 8) -> list[np.ndarray]:
    """Seeded Y vectors with zero trace and a few low cosine modes."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        v = np.zeros(K + 3)
        v[2 : 2 + modes] = rng.standard_normal(modes) / (1 + np.arange(modes)) ** 2
        out.append(v)
    return out


def neumann_handle(K: int = DEFAULT_K, q: float = 2.0, params: Optional[OperatorParams] = None) -> OperatorHandle:
    """Handle for B' acting on Y vectors [y0, y1, c_0..c_K]."""
    if params is None:
        p_star = 2 * q / (1 + q)
        q_star = p_star / (p_star - 1)
        params = OperatorParams(
            omega_A=0.0, M_A=1.0, p=2.0, omega_B=0.0, p_star=p_star, q_star=q_star,
            alpha=0.5 * (1 / q_star + 0.5), eta=0.25,
        )
    nu = mode_rates(K)

    def split(v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != K + 3:
            raise ArgumentError(f"expected Y vectors of length {K + 3}")
        return v

    def in_closure(v):
        v = split(v)
        return bool(np.all(np.abs(v[..., :2]) <= 1e-12 * max(1.0, np.max(np.abs(v)))))

    def need_closure(v):
        if not in_closure(v):
            raise DomainError("input has nonzero trace slot; it is outside the domain closure")

    def resolvent(lam, v):
        v = split(v)
        if not lam > 0:
            raise ArgumentError(f"lambda must be positive, got {lam}")
        out = np.zeros_like(v)
        out[..., 2:] = (v[..., 2:] + trace_source(v[..., 0], v[..., 1], K)) / (lam + nu)
        return out

    def semigroup(t, v):
        v = split(v)
        need_closure(v)
        out = np.zeros_like(v)
        out[..., 2:] = np.exp(-nu * t) * v[..., 2:]
        return out

    def semigroup_integral(t, v):
        v = split(v)
        need_closure(v)
        g = np.empty_like(nu)
        g[0] = t
        g[1:] = -np.expm1(-nu[1:] * t) / nu[1:]
        out = np.zeros_like(v)
        out[..., 2:] = g * v[..., 2:]
        return out

    def derivative(t, v):
        out = np.zeros_like(split(v))
        out[..., 2:] = tb_coefficients(t, v, K)
        return out

    def apply(v):
        v = split(v)
        need_closure(v)
        out = np.zeros_like(v)
        out[..., 2:] = -nu * v[..., 2:]
        return out

    def diamond_exact(path, t):
        vals, err = sb_diamond_with_error(path, t, K)
        out = np.zeros(K + 3)
        out[2:] = vals
        return out, err

    return OperatorHandle(
        resolvent=resolvent,
        semigroup_part=semigroup,
        params=params,
        backend_tag="neumann_laplacian",
        norm=y_norm,
        apply=apply,
        derivative_semigroup=derivative,
        semigroup_integral=semigroup_integral,
        diamond_exact=diamond_exact,
        in_closure=in_closure,
        in_domain=in_closure,
    )
