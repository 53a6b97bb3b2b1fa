"""Operator handles, parameter records and the dense matrix backend."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ArgumentError, SpectralPointError, ValidationError

MATRIX_TOL = 1e-10
QUADRATURE_TOL = 1e-6
BACKENDS = ("matrix", "age_transport", "neumann_laplacian", "sum")


@dataclass(frozen=True)
class OperatorParams:
    """Growth, integrability and coupling constants attached to an operator.

    Defaults correspond to p = q = 2 for the diffusion backend, where the
    almost-sectorial exponent is 2q/(1+q) = 4/3.
    """

    omega_A: float = 0.0
    M_A: float = 1.0
    p: float = 2.0
    omega_B: float = 0.0
    p_star: float = 4.0 / 3.0
    q_star: float = 4.0
    alpha: float = 0.3
    eta: float = 0.25
    lambda0: float = 1.0
    r: float = 5.0

    def violations(self) -> list[str]:
        out = []
        if not self.M_A >= 1:
            out.append(f"M_A >= 1 (got {self.M_A})")
        if not self.p > 1:
            out.append(f"p > 1 (got {self.p})")
        if not self.p_star >= 1:
            out.append(f"p_star >= 1 (got {self.p_star})")
        if not abs(1 / self.p_star + 1 / self.q_star - 1) < 1e-12:
            out.append("1/p_star + 1/q_star = 1")
        if not 1 / self.p + 1 / self.p_star > 1:
            out.append(f"1/p + 1/p_star > 1 (got {1 / self.p + 1 / self.p_star:.6g})")
        if not 1 / self.q_star < self.alpha < 1 / self.p:
            out.append(
                f"1/q_star < alpha < 1/p (got {1 / self.q_star:.6g} < {self.alpha} < {1 / self.p:.6g})"
            )
        if not self.eta > max(0.0, self.omega_A):
            out.append(f"eta > max(0, omega_A) (got eta={self.eta}, omega_A={self.omega_A})")
        if not 1 + 1 / self.r < 1 / self.p + 1 / self.p_star:
            out.append(
                f"1 + 1/r < 1/p + 1/p_star (got {1 + 1 / self.r:.6g} vs {1 / self.p + 1 / self.p_star:.6g})"
            )
        return out

    def validate(self) -> "OperatorParams":
        bad = self.violations()
        if bad:
            raise ValidationError("operator parameters violate: " + "; ".join(bad))
        return self

    def kappa_bound_constant(self) -> float:
        """M_A^(1+1/p) / (1 - exp(omega_A - eta))."""
        return self.M_A ** (1 + 1 / self.p) / (1 - np.exp(self.omega_A - self.eta))

    def shifted(self, delta: float) -> "OperatorParams":
        return replace(self, omega_A=self.omega_A - delta)


@dataclass(frozen=True)
class MatrixOperator:
    dim: int
    entries: np.ndarray
    domain_projection: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if self.dim < 1 or m.shape != (self.dim, self.dim):
            raise ArgumentError(f"entries must be {self.dim}x{self.dim}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ArgumentError("matrix entries must be finite")
        object.__setattr__(self, "entries", m)
        if self.domain_projection is not None:
            P = np.asarray(self.domain_projection, dtype=float)
            if P.shape != m.shape or np.max(np.abs(P @ P - P)) > 1e-12:
                raise ArgumentError("domain_projection must be an idempotent n x n matrix")
            object.__setattr__(self, "domain_projection", P)

    @classmethod
    def of(cls, entries) -> "MatrixOperator":
        m = np.atleast_2d(np.asarray(entries, dtype=float))
        return cls(m.shape[0], m)


def euclidean_norm(x) -> float:
    return float(np.linalg.norm(np.ravel(x)))


@dataclass(frozen=True)
class OperatorHandle:
    """Uniform access to a linear operator through its resolvent and semigroup.

    Optional hooks let a backend supply exact formulas; the calculus falls back
    to generic quadrature when a hook is absent.
    """

    resolvent: Callable[[float, np.ndarray], np.ndarray]
    semigroup_part: Callable[[float, np.ndarray], np.ndarray]
    params: OperatorParams
    backend_tag: str
    norm: Callable[[np.ndarray], float] = euclidean_norm
    apply: Optional[Callable[[np.ndarray], np.ndarray]] = None
    derivative_semigroup: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    semigroup_integral: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    diamond_exact: Optional[Callable] = None
    in_closure: Optional[Callable[[np.ndarray], bool]] = None
    in_domain: Optional[Callable[[np.ndarray], bool]] = None
    dense: Optional[np.ndarray] = None
    nilpotent_after: Optional[float] = None
    time_step: Optional[float] = None
    pair_rules: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.backend_tag not in BACKENDS:
            raise ArgumentError(f"unknown backend tag {self.backend_tag!r}")


def _matrix_growth(m: np.ndarray, p: float, margin: float) -> tuple[float, float]:
    # the logarithmic 2-norm gives ||exp(tA)|| <= exp(mu t) with constant 1; Hoelder
    # over the margin turns it into the L^p convolution constant
    mu = float(np.max(np.linalg.eigvalsh((m + m.T) / 2)))
    omega = mu + margin
    pc = p / (p - 1)
    M = max(1.0, (margin * pc) ** (-1 / pc))
    return omega, M


def matrix_handle(
    op, params: Optional[OperatorParams] = None, margin: float = 0.5, p: float = 2.0
) -> OperatorHandle:
    """Handle for a dense matrix; growth constants are derived when not given."""
    mo = op if isinstance(op, MatrixOperator) else MatrixOperator.of(op)
    m = mo.entries
    n = mo.dim
    eye = np.eye(n)
    if params is None:
        omega, M = _matrix_growth(m, p, margin)
        eig = np.linalg.eigvals(m)
        params = OperatorParams(
            omega_A=omega,
            M_A=M,
            p=p,
            omega_B=float(np.max(eig.real)),
            eta=max(0.0, omega) + 0.25,
        )

    @lru_cache(maxsize=4096)
    def _expm(t: float) -> np.ndarray:
        return scipy.linalg.expm(t * m)

    def resolvent(lam, x):
        a = lam * eye - m
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu = scipy.linalg.lu_factor(a, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SpectralPointError(f"resolvent failed at lambda={lam}: {exc}") from None
        if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.max(np.abs(a))):
            raise SpectralPointError(f"lambda={lam} is (numerically) an eigenvalue")
        return scipy.linalg.lu_solve(lu, np.asarray(x, dtype=float))

    def semigroup(t, x):
        if t < 0:
            raise ArgumentError("semigroup time must be non-negative")
        if t == 0:
            return np.array(x, dtype=float)
        return _expm(float(t)) @ np.asarray(x, dtype=float)

    P = mo.domain_projection

    def in_closure(x):
        if P is None:
            return True
        return bool(np.linalg.norm(P @ x - x) <= 1e-10 * max(1.0, np.linalg.norm(x)))

    return OperatorHandle(
        resolvent=resolvent,
        semigroup_part=semigroup,
        params=params,
        backend_tag="matrix",
        apply=lambda x: m @ np.asarray(x, dtype=float),
        derivative_semigroup=semigroup,
        in_closure=in_closure,
        in_domain=in_closure,
        dense=m,
    )


def resolvent_power(op: OperatorHandle, lam: float, k: int, x) -> np.ndarray:
    """(lam - A)^(-k) x by repeated application of the resolvent."""
    if k < 1:
        raise ArgumentError("k must be >= 1")
    if not lam > op.params.omega_A:
        raise ArgumentError(f"lambda={lam} must exceed omega_A={op.params.omega_A}")
    y = np.asarray(x, dtype=float)
    for _ in range(k):
        y = op.resolvent(lam, y)
    return y


def _power_norm(apply, apply_t, n, iters=200, seed=0) -> float:
    """Largest singular value by power iteration on apply_t(apply(.))."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iters):
        w = apply_t(apply(v))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        s_new = np.sqrt(nw)
        v = w / nw
        if abs(s_new - s) <= 1e-13 * s_new:
            s = s_new
            break
        s = s_new
    return float(s)


def operator_norm_estimate(op: OperatorHandle, lam: float, k: int = 1, probes=None) -> float:
    """||(lam - A)^(-k)|| by power iteration (matrix) or probe maximisation."""
    if op.dense is not None and probes is None:
        n = op.dense.shape[0]
        a = lam * np.eye(n) - op.dense
        ak = np.linalg.matrix_power(a, k)

        def apply(v):
            return np.linalg.solve(ak, v)

        def apply_t(v):
            return np.linalg.solve(ak.T, v)

        return _power_norm(apply, apply_t, n)
    if probes is None or len(probes) == 0:
        raise ArgumentError("function backends need a probe set for norm estimates")
    best = 0.0
    for x in probes:
        nx = op.norm(x)
        if nx > 0:
            best = max(best, op.norm(resolvent_power(op, lam, k, x)) / nx)
    return best


@dataclass(frozen=True)
class HilleYosidaEstimate:
    M_est: float
    omega_est: float


def hille_yosida_estimate(
    op: OperatorHandle, lambda_grid: Sequence[float], k_max: int, probes=None
) -> HilleYosidaEstimate:
    """Smallest M with ||(lam - A)^(-k)|| <= M / (lam - omega)^k over the grid."""
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ArgumentError("lambda grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ArgumentError("lambda grid must be strictly increasing")
    if np.any(grid <= op.params.omega_A):
        raise ArgumentError("lambda grid must lie above omega_A")
    if op.dense is not None:
        omega = float(np.max(np.linalg.eigvals(op.dense).real))
    else:
        omega = op.params.omega_A
    if np.any(grid <= omega):
        raise ArgumentError("lambda grid must lie above the spectral bound")
    M = 0.0
    for lam in grid:
        for k in range(1, k_max + 1):
            nk = operator_norm_estimate(op, lam, k, probes)
            M = max(M, nk * (lam - omega) ** k)
    return HilleYosidaEstimate(M_est=M, omega_est=omega)


def commutativity_residual(opA: OperatorHandle, opB: OperatorHandle, lam: float, mu: float, x) -> float:
    x = np.asarray(x, dtype=float)
    ab = opA.resolvent(lam, opB.resolvent(mu, x))
    ba = opB.resolvent(mu, opA.resolvent(lam, x))
    return opA.norm(ab - ba)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    lambdas: np.ndarray = field(repr=False, default=None)
    norms: np.ndarray = field(repr=False, default=None)


def loglog_fit(xs, ys) -> tuple[float, float]:
    xs = np.log(np.asarray(xs, dtype=float))
    ys = np.log(np.asarray(ys, dtype=float))
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept)


def resolvent_decay_fit(op: OperatorHandle, lambda_grid: Sequence[float], probe_set) -> SlopeFit:
    """Least-squares slope of log ||(lam - Op)^(-1)|| against log lam."""
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size < 4:
        raise ArgumentError("need at least 4 lambda values")
    if np.any(grid <= 0) or np.log10(grid[-1] / grid[0]) < 3 - 1e-9:
        raise ArgumentError("lambda grid must be positive and span at least 3 decades")
    norms = np.array([operator_norm_estimate(op, lam, 1, probe_set) for lam in grid])
    slope, intercept = loglog_fit(grid, norms)
    return SlopeFit(slope, intercept, grid, norms)


def seeded_probes(dim: int, n: int = 64, seed: int = 20240601) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(dim) for _ in range(n)]
