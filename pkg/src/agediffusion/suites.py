"""Verification suites shared by the CLI ``verify`` command and the test harness.

A suite is a list of Check rows: property name, the identity checked, the
observed residual and the tolerance it must meet.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg

from .age import AgeGrid, age_handle, age_probes
from .calculus import (
    TimeSampledPath,
    diamond_cocycle_residual,
    integrated_semigroup_axiom_residuals,
    kappa,
    kappa_commutation_residual,
    kappa_derivative_residual,
    kappa_shift_residual,
    product_semigroup_residual,
    resolvent_exchange_residual,
    sum_integrated_semigroup,
    sum_residual,
    sum_resolvent,
    weak_solution_residual,
    weighted_lp_norm,
)
from .coupled import CoupledSpace, coupled_handles, smooth_probe
from .errors import ArgumentError
from .neumann import neumann_handle
from .operators import commutativity_residual, matrix_handle

MATRIX_SEED = 20240601
AXIOM_TIMES = (0.1, 0.5, 1.0)


@dataclass(frozen=True)
class Check:
    prop: str
    identity: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)


def commuting_pair(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """A stable non-normal A and B = b0 + b1 A + b2 A^2, which commutes with A."""
    a = -1.5 * np.eye(n) + 0.3 / np.sqrt(n) * rng.standard_normal((n, n))
    b = rng.uniform([-1.0, -0.5, -0.2], [0.5, 0.5, 0.2])
    return a, b[0] * np.eye(n) + b[1] * a + b[2] * a @ a


def matrix_pairs(count: int = 20, seed: int = MATRIX_SEED, max_dim: int = 8):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(1, max_dim + 1))
        a, b = commuting_pair(rng, n)
        yield rng, a, b


def _integral_of_exp(m: np.ndarray, t: float, x: np.ndarray) -> np.ndarray:
    """int_0^t exp(s m) x ds from the block exponential [[m, I], [0, 0]]."""
    n = m.shape[0]
    big = np.zeros((2 * n, 2 * n))
    big[:n, :n] = m
    big[:n, n:] = np.eye(n)
    return scipy.linalg.expm(t * big)[:n, n:] @ x


def matrix_sum_checks(count: int = 20, seed: int = MATRIX_SEED) -> list[Check]:
    worst = {"resolvent": 0.0, "product": 0.0, "integrated": 0.0, "weak": 0.0, "commute": 0.0}
    for rng, a, b in matrix_pairs(count, seed):
        n = a.shape[0]
        op_a, op_b = matrix_handle(a), matrix_handle(b)
        lam = op_a.params.eta + op_b.params.omega_B + 1.0 + rng.uniform()
        eye = np.eye(n)
        r = sum_resolvent(op_a, op_b, lam, eye)
        direct = np.linalg.inv(lam * eye - a - b)
        worst["resolvent"] = max(worst["resolvent"], np.linalg.norm(r - direct, 2))
        x = rng.standard_normal(n)
        worst["commute"] = max(worst["commute"], commutativity_residual(op_a, op_b, lam, lam + 1.0, x))
        for t in AXIOM_TIMES:
            worst["product"] = max(worst["product"], product_semigroup_residual(op_a, op_b, t, x))
            got = sum_integrated_semigroup(op_a, op_b, t, x)
            worst["integrated"] = max(worst["integrated"], np.linalg.norm(got - _integral_of_exp(a + b, t, x)))
        y = rng.standard_normal(n)
        classical = np.linalg.solve(lam * eye - a - b, y)
        lam_a = max(0.0, op_a.params.omega_A) + 1.0
        worst["weak"] = max(worst["weak"], weak_solution_residual(op_a, op_b, lam, classical, y, lam_a, 0.5))
    return [
        Check("sum resolvent", "K_A(e^{-lam s} T_B(s)) = (lam - A - B)^{-1}", worst["resolvent"], 1e-8),
        Check("resolvent commutation", "R(lam,A)R(mu,B) = R(mu,B)R(lam,A)", worst["commute"], 1e-12),
        Check("product semigroup", "T_{A+B}(t) = T_A(t) T_B(t)", worst["product"], 1e-10),
        Check("sum integrated semigroup", "S_{A+B}(t) = int_0^t exp(s(A+B)) ds", worst["integrated"], 1e-6),
        Check("weak solution", "weak identity holds for the classical solution", worst["weak"], 1e-8),
    ]


def _axiom_checks(name: str, op, x) -> list[Check]:
    gen = shift = 0.0
    for t in AXIOM_TIMES:
        for s in AXIOM_TIMES:
            res = integrated_semigroup_axiom_residuals(op, t, s, x)
            gen, shift = max(gen, res["generator"]), max(shift, res["shift"])
    return [
        Check(f"{name}: integrated generator", "S(t)x - t x = A int_0^t S(r)x dr", gen, 1e-6),
        Check(f"{name}: integrated shift", "S(t+s) - S(s) = T(s) S(t)", shift, 1e-6),
    ]


def _cocycle_check(name: str, op, path) -> Check:
    worst = 0.0
    for t in AXIOM_TIMES:
        for s in AXIOM_TIMES:
            if s < t:
                worst = max(worst, diamond_cocycle_residual(op, path, s, t))
    return Check(f"{name}: cocycle", "(S<>f)(t) = T(t-s)(S<>f)(s) + (S<>f(.+s))(t-s)", worst, 1e-6)


def _age_setup(n_a: int = 3000):
    grid = AgeGrid(3.0, n_a)
    op = age_handle(grid)
    x = age_probes(grid, n=3)[2]
    c = grid.centers

    def ev(s):
        s = np.asarray(s, dtype=float)
        head = np.cos(3 * s)[:, None]
        tail = np.exp(-c)[None, :] * (1 + s[:, None])
        return np.hstack([head, tail])

    return op, x, TimeSampledPath.from_function(ev, 3.0)


def _neumann_setup(K: int = 64):
    op = neumann_handle(K)
    rng = np.random.default_rng(MATRIX_SEED)
    x = np.zeros(K + 3)
    x[2:] = rng.standard_normal(K + 1) / (1 + np.arange(K + 1)) ** 2

    def ev(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros((s.size, K + 3))
        out[:, 0] = np.cos(s)
        out[:, 1] = s
        out[:, 2:5] = np.exp(-s)[:, None]
        return out

    return op, x, TimeSampledPath.from_function(ev, 2.0)


def semigroup_checks(count: int = 5) -> list[Check]:
    out = []
    mat_gen = mat_shift = mat_cocycle = 0.0
    for rng, a, _ in matrix_pairs(count):
        op = matrix_handle(a)
        x = rng.standard_normal(a.shape[0])
        for row in _axiom_checks("matrix", op, x):
            if "generator" in row.prop:
                mat_gen = max(mat_gen, row.residual)
            else:
                mat_shift = max(mat_shift, row.residual)
        w = rng.standard_normal(a.shape[0])
        path = TimeSampledPath.from_function(lambda s, w=w: np.cos(2 * s)[:, None] * w + s[:, None], 2.0)
        mat_cocycle = max(mat_cocycle, _cocycle_check("matrix", op, path).residual)
    out += [
        Check("matrix: integrated generator", "S(t)x - t x = A int_0^t S(r)x dr", mat_gen, 1e-6),
        Check("matrix: integrated shift", "S(t+s) - S(s) = T(s) S(t)", mat_shift, 1e-6),
        Check("matrix: cocycle", "(S<>f)(t) = T(t-s)(S<>f)(s) + (S<>f(.+s))(t-s)", mat_cocycle, 1e-6),
    ]
    for name, setup in (("age transport", _age_setup), ("Neumann B'", _neumann_setup)):
        op, x, path = setup()
        out += _axiom_checks(name, op, x)
        out.append(_cocycle_check(name, op, path))
    op, _, path = _age_setup()
    out.append(Check(
        "age transport: resolvent exchange", "R(lam)(S<>f)(t) = (S<>R(lam)f)(t)",
        resolvent_exchange_residual(op, path, 1.0, 2.0), 1e-6,
    ))
    return out


class _BoundCounter:
    """Counts kappa calls and checks the a-priori bound independently of kappa itself."""

    def __init__(self):
        self.calls = 0
        self.worst = 0.0

    def __call__(self, op, f, eta=None, tol=1e-10):
        value = kappa(op, f, eta, tol)
        eta = op.params.eta if eta is None else eta
        bound = replace(op.params, eta=eta).kappa_bound_constant() * weighted_lp_norm(op, f, eta, op.params.p)
        self.calls += 1
        self.worst = max(self.worst, op.norm(value) / bound if bound > 0 else 0.0)
        return value


def kappa_checks() -> list[Check]:
    count = _BoundCounter()
    exp1 = lambda s: np.exp(-np.asarray(s, dtype=float))[:, None]
    f1 = TimeSampledPath.from_function(
        exp1, 1.0, derivative=TimeSampledPath.from_function(lambda s: -exp1(s), 1.0)
    )
    scalar = matrix_handle([[-1.0]])
    diag = matrix_handle(np.diag([-1.0, -2.0]))
    f2 = TimeSampledPath.from_function(lambda s: np.exp(-np.asarray(s))[:, None] * np.ones(2), 1.0)
    v1 = count(scalar, f1)
    v2 = count(diag, f2)
    analytic = max(abs(v1[0] - 0.5), abs(v2[0] - 0.5), abs(v2[1] - 1 / 3))
    deriv = kappa_derivative_residual(scalar, f1)

    rng = np.random.default_rng(MATRIX_SEED)
    a, b = commuting_pair(rng, 4)
    op_a, op_b = matrix_handle(a), matrix_handle(b)
    w = rng.standard_normal(4)
    dw = rng.standard_normal(4)
    smooth = lambda s: np.exp(-np.asarray(s, dtype=float))[:, None] * (w + np.asarray(s)[:, None] * dw)
    smooth_d = lambda s: np.exp(-np.asarray(s, dtype=float))[:, None] * (dw - w - np.asarray(s)[:, None] * dw)
    f4 = TimeSampledPath.from_function(smooth, 1.0, derivative=TimeSampledPath.from_function(smooth_d, 1.0))
    count(op_a, f4)
    deriv = max(deriv, kappa_derivative_residual(op_a, f4))
    shift = max(kappa_shift_residual(scalar, f1, 0.5), kappa_shift_residual(op_a, f4, 0.3))
    commute = kappa_commutation_residual(op_a, op_b, f4)
    return [
        Check("kappa analytic values", "K_A(e^{-s}) = 1/2 and 1/3 for A = -1, -2", analytic, 1e-8),
        Check("kappa derivative identity", "K_A(f') + A K_A(f) + f(0) = 0", deriv, 1e-6),
        Check("kappa shift identity", "K_{A-d}(f) = K_A(e^{-d s} f)", shift, 1e-6),
        Check("kappa commutation", "K_A(Bf) = B K_A(f)", commute, 1e-8),
        Check("kappa a-priori bound", "||K_A f|| / (M~ ||f||_{L^p_eta}) <= 1", count.worst, 1.0),
    ]


def coupled_sum_checks(n_a: int = 8000, K: int = 8) -> list[Check]:
    space = CoupledSpace(AgeGrid(2.0, n_a), K)
    op_a, op_b = coupled_handles(space)
    rng = np.random.default_rng(MATRIX_SEED)
    res = 0.0
    for kind in ("head", "tail", "mixed"):
        x = smooth_probe(space, rng, kind, modes=2)
        res = max(res, sum_residual(op_a, op_b, 2.0, x))
    commute = 0.0
    prod = 0.0
    for kind in ("tail", "trace", "mixed"):
        x = smooth_probe(space, rng, kind)
        commute = max(commute, commutativity_residual(op_a, op_b, 2.0, 3.0, x))
    tail_only = smooth_probe(space, rng, "tail")
    for t in AXIOM_TIMES:
        prod = max(prod, product_semigroup_residual(op_a, op_b, t, tail_only))
    return [
        Check("coupled pair: resolvent commutation", "R(lam,A)R(mu,B) = R(mu,B)R(lam,A)", commute, 1e-10),
        Check("coupled pair: sum resolvent", "(lam - A - B) R x = x", res, 1e-4),
        Check("coupled pair: product semigroup", "T_{A+B}(t) = T_A(t) T_B(t)", prod, 1e-10),
    ]


def sum_checks() -> list[Check]:
    return matrix_sum_checks() + coupled_sum_checks()


def spectral_checks() -> list[Check]:
    from .fits import FITS, interior_resolvent_fit

    out = []
    for target, fn in FITS.items():
        rep = fn()
        out.append(Check(f"fit {target}", f"exponent {rep.expected:+.2f}", abs(rep.value - rep.expected), rep.band))
    rep = interior_resolvent_fit()
    out.append(Check("fit bprime_interior", f"exponent {rep.expected:+.2f}", abs(rep.value - rep.expected), rep.band))
    return out


SUITES: dict[str, Callable[[], list[Check]]] = {
    "semigroup": semigroup_checks,
    "kappa": kappa_checks,
    "sum": sum_checks,
    "spectral": spectral_checks,
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [row for fn in SUITES.values() for row in fn()]
    if name not in SUITES:
        raise ArgumentError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['all']}")
    return SUITES[name]()
