import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from agediffusion.errors import ArgumentError, ConvergenceError
from agediffusion.neumann import (
    Grading,
    InteriorField,
    TracePair,
    YElement,
    b0_semigroup,
    bprime_apply,
    bprime_resolvent,
    cos_norm,
    corrector_coefficients,
    corrector_values,
    lift_coefficients,
    lift_values,
    mode_rates,
    neumann_handle,
    sb_diamond,
    sb_diamond_with_error,
    singularity_exponent_fit,
    tb_semigroup,
)
from agediffusion.numerics import gauss_legendre

X = np.linspace(0.0, 1.0, 41)


def cosine_field(k, K, amp=1.0):
    return InteriorField.mode(k, K, amp)


def test_eigenfunction_resolvent():
    w = bprime_resolvent(1.0, TracePair(), cosine_field(1, 32))
    assert np.allclose(w.values(X), np.cos(np.pi * X) / (1 + np.pi ** 2), atol=1e-15)


def test_unit_flux_resolvent_is_hyperbolic():
    w = bprime_resolvent(1.0, TracePair(1.0, 0.0), InteriorField.zeros(256))
    assert np.max(np.abs(w.values(X) - np.cosh(1 - X) / np.sinh(1.0))) < 1e-7
    assert w.flux == (1.0, 0.0)


@pytest.mark.parametrize("lam", [0.5, 7.0, 300.0])
def test_corrector_coefficients_against_quadrature(lam):
    K = 24
    c0, c1 = corrector_coefficients(lam, K)
    for k in range(K + 1):
        q0 = quad(lambda x: corrector_values(lam, x)[0] * np.cos(k * np.pi * x), 0, 1, epsabs=1e-14, limit=200)[0]
        q1 = quad(lambda x: corrector_values(lam, x)[1] * np.cos(k * np.pi * x), 0, 1, epsabs=1e-14, limit=200)[0]
        assert c0[k] == pytest.approx(cos_norm(K)[k] * q0, abs=1e-10)
        assert c1[k] == pytest.approx(cos_norm(K)[k] * q1, abs=1e-10)


def test_lift_coefficients_against_quadrature():
    K = 16
    l0, l1 = lift_coefficients(K)
    for k in range(K + 1):
        q0 = quad(lambda x: lift_values(x)[0] * np.cos(k * np.pi * x), 0, 1)[0]
        q1 = quad(lambda x: lift_values(x)[1] * np.cos(k * np.pi * x), 0, 1)[0]
        assert l0[k] == pytest.approx(cos_norm(K)[k] * q0, abs=1e-12)
        assert l1[k] == pytest.approx(cos_norm(K)[k] * q1, abs=1e-12)


def fd_bvp(lam, y0, y1, psi, n=2000):
    """Second-order FD for lam w - w'' = psi, -w'(0) = y0, w'(1) = y1, ghost nodes folded."""
    h = 1.0 / n
    x = np.linspace(0, 1, n + 1)
    ab = np.zeros((3, n + 1))
    ab[0, 1:] = -1 / h ** 2
    ab[1, :] = lam + 2 / h ** 2
    ab[2, :-1] = -1 / h ** 2
    ab[0, 1] = -2 / h ** 2
    ab[2, -2] = -2 / h ** 2
    rhs = psi(x).copy()
    rhs[0] += 2 * y0 / h
    rhs[-1] += 2 * y1 / h
    return x, scipy.linalg.solve_banded((1, 1), ab, rhs)


def test_resolvent_against_fd_bvp():
    psi = InteriorField.from_function(lambda x: x ** 2, 256)
    w = bprime_resolvent(2.0, TracePair(0.3, -0.2), psi)
    x, ref = fd_bvp(2.0, 0.3, -0.2, lambda x: x ** 2)
    assert np.max(np.abs(w.values(x) - ref)) < 1e-5


def test_resolvent_rejects_nonpositive_lambda():
    with pytest.raises(ArgumentError):
        bprime_resolvent(0.0, TracePair(), InteriorField.zeros(4))


def test_resolvent_solves_the_equation():
    rng = np.random.default_rng(2)
    K = 128
    psi = InteriorField(rng.standard_normal(K + 1) / (1 + np.arange(K + 1)) ** 2)
    y = TracePair(0.7, -1.3)
    lam = 3.0
    w = bprime_resolvent(lam, y, psi)
    out = bprime_apply(w)
    residual = lam * w.coeffs - out.field.coeffs - psi.coeffs
    assert np.max(np.abs(residual)) <= 1e-6
    assert abs(-out.trace.y0 - y.y0) <= 1e-6 and abs(-out.trace.y1 - y.y1) <= 1e-6


@given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=50, deadline=None)
def test_resolvent_identity(lam, mu, y0, y1):
    K = 128
    op = neumann_handle(K)
    v = np.zeros(K + 3)
    v[:2] = y0, y1
    v[2:6] = [1.0, -0.5, 0.25, 0.1]
    lhs = op.resolvent(lam, v) - op.resolvent(mu, v)
    rhs = (mu - lam) * op.resolvent(lam, op.resolvent(mu, v))
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.max(np.abs(lhs)))


def test_doubling_modes_is_stable_for_smooth_data():
    f = lambda x: np.cos(np.pi * x) * np.exp(x)
    w1 = bprime_resolvent(5.0, TracePair(0.2, 0.1), InteriorField.from_function(f, 128))
    w2 = bprime_resolvent(5.0, TracePair(0.2, 0.1), InteriorField.from_function(f, 256))
    assert np.max(np.abs(w1.values(X) - w2.values(X))) < 1e-6


def test_b0_semigroup():
    psi = cosine_field(2, 8)
    assert b0_semigroup(0.0, psi) is psi
    got = b0_semigroup(0.1, psi)
    assert got.coeffs[2] == pytest.approx(np.exp(-0.4 * np.pi ** 2), rel=1e-14)
    mixed = InteriorField(np.linspace(1, 2, 9))
    for t in (0.01, 1.0, 10.0):
        assert b0_semigroup(t, mixed).coeffs[0] == mixed.coeffs[0]


def test_tb_on_eigenmode():
    u = YElement(TracePair(), cosine_field(3, 8))
    assert tb_semigroup(0.02, u).coeffs[3] == pytest.approx(np.exp(-9 * np.pi ** 2 * 0.02), rel=1e-13)


def test_tb_is_independent_of_lambda():
    u = YElement(TracePair(1.0, -0.5), InteriorField(np.linspace(1, 0, 65)))
    assert np.max(np.abs(tb_semigroup(0.05, u, 1.0).coeffs - tb_semigroup(0.05, u, 5.0).coeffs)) <= 1e-8


def test_tb_rejects_t_zero():
    with pytest.raises(ArgumentError):
        tb_semigroup(0.0, YElement(TracePair(1.0, 0.0), InteriorField.zeros(4)))


@given(st.floats(0.001, 0.5), st.floats(0.001, 0.5))
@settings(max_examples=40, deadline=None)
def test_tb_semigroup_property(t, s):
    u = YElement(TracePair(1.0, 0.4), InteriorField(np.r_[0.5, 0.2, np.zeros(255)]))
    lhs = tb_semigroup(t + s, u).coeffs
    rhs = b0_semigroup(t, tb_semigroup(s, u)).coeffs
    assert np.max(np.abs(lhs - rhs)) <= 1e-7


def test_singularity_exponents():
    t = np.logspace(-4, -1, 12)
    assert singularity_exponent_fit(YElement(TracePair(1.0, 0.0), InteriorField.zeros(0)), t) == pytest.approx(-0.25, abs=0.03)
    assert singularity_exponent_fit(YElement(TracePair(0.0, 1.0), InteriorField.zeros(0)), t) == pytest.approx(-0.25, abs=0.03)
    small = np.logspace(-6, -3, 8)
    assert abs(singularity_exponent_fit(YElement(TracePair(), cosine_field(1, 4)), small)) < 0.01


def test_singularity_fit_oracle_by_direct_summation():
    # ||T_B(t)((1,0),0)||^2 = sum_k w_k (cos_norm_k e^{-k^2 pi^2 t})^2
    K = 4096
    t = np.logspace(-4, -1, 12)
    k = np.arange(K + 1)
    w = np.where(k == 0, 1.0, 0.5)
    cn = np.where(k == 0, 1.0, 2.0)
    norms = [np.sqrt(np.sum(w * (cn * np.exp(-(k * np.pi) ** 2 * s)) ** 2)) for s in t]
    oracle = np.polyfit(np.log(t), np.log(norms), 1)[0]
    got = singularity_exponent_fit(YElement(TracePair(1.0, 0.0), InteriorField.zeros(0)), t, K)
    assert got == pytest.approx(oracle, abs=1e-12)


def constant_path(vec):
    vec = np.asarray(vec, dtype=float)
    return lambda s: np.broadcast_to(vec, (np.size(s), vec.size)).copy()


def test_sb_diamond_zero():
    out = sb_diamond(constant_path(np.zeros(11)), 0.5)
    assert not np.any(out.coeffs)


def test_sb_diamond_on_eigenmode():
    v = np.zeros(11)
    v[3] = 1.0  # cos(pi x)
    out = sb_diamond(constant_path(v), 0.3)
    assert out.coeffs[1] == pytest.approx((1 - np.exp(-np.pi ** 2 * 0.3)) / np.pi ** 2, rel=1e-12)
    assert np.max(np.abs(np.delete(out.coeffs, 1))) < 1e-15


def heat_with_flux(t_end, n=400, steps=20000):
    """Crank-Nicolson for u_t = u_xx, -u_x(0) = 1, u_x(1) = 0, u(0) = 0; backward Euler start."""
    h = 1.0 / n
    dt = t_end / steps
    x = np.linspace(0, 1, n + 1)
    lap = np.zeros((3, n + 1))
    lap[0, 1:] = 1 / h ** 2
    lap[1, :] = -2 / h ** 2
    lap[2, :-1] = 1 / h ** 2
    lap[0, 1] = 2 / h ** 2
    lap[2, -2] = 2 / h ** 2
    src = np.zeros(n + 1)
    src[0] = 2 / h

    def apply(u):
        out = lap[1] * u
        out[:-1] += lap[0, 1:] * u[1:]
        out[1:] += lap[2, :-1] * u[:-1]
        return out

    u = np.zeros(n + 1)
    be = -dt * lap
    be[1] += 1
    for _ in range(4):
        u = scipy.linalg.solve_banded((1, 1), be, u + dt * src)
    cn = -0.5 * dt * lap
    cn[1] += 1
    for _ in range(steps - 4):
        u = scipy.linalg.solve_banded((1, 1), cn, u + 0.5 * dt * apply(u) + dt * src)
    return x, u


def test_sb_diamond_against_heat_solver():
    K = 512
    v = np.zeros(K + 3)
    v[0] = 1.0
    out = sb_diamond(constant_path(v), 0.5)
    x, ref = heat_with_flux(0.5)
    assert np.max(np.abs(out.values(x) - ref)) < 1e-3


def test_sb_diamond_integrated_identity():
    # (S<>F)(t) = B' int_0^t (S<>F)(s) ds + int_0^t F(s) ds, with F(s) = ((cos s, s), e^{-s} cos(pi x))
    K = 128

    def F(s):
        s = np.atleast_1d(s)
        out = np.zeros((s.size, K + 3))
        out[:, 0] = np.cos(s)
        out[:, 1] = s
        out[:, 3] = np.exp(-s)
        return out

    t = 0.4
    # high modes relax on a 1/nu_k time scale after s = 0, so cells are geometric toward 0
    nodes, weights = gauss_legendre(8)
    edges = np.r_[0.0, t * 2.0 ** -np.arange(40, -1, -1)]
    inner = np.zeros(K + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        for z, w in zip(nodes, weights):
            inner += w * (hi - lo) * sb_diamond(F, lo + z * (hi - lo)).coeffs
    flux_integral = (np.sin(t), t ** 2 / 2)
    lap = bprime_apply(InteriorField(inner, flux_integral)).field.coeffs
    f_integral = np.zeros(K + 1)
    f_integral[1] = 1 - np.exp(-t)
    lhs = sb_diamond(F, t).coeffs
    assert np.max(np.abs(lhs - lap - f_integral)) < 1e-4


def test_sb_diamond_mass_balance():
    v = np.zeros(35)
    v[0], v[1], v[2] = 0.7, 0.4, 0.1
    path = constant_path(v)
    h = 1e-3
    t = 0.3
    rate = (sb_diamond(path, t + h).coeffs[0] - sb_diamond(path, t - h).coeffs[0]) / (2 * h)
    assert rate == pytest.approx(0.1 + 0.7 + 0.4, abs=1e-4)


def test_sb_diamond_nonconvergence_raises():
    rough = lambda s: np.where(np.atleast_1d(s)[:, None] > 0.2, 1.0, 0.0) * np.ones(7) * np.sin(1e4 * np.atleast_1d(s))[:, None]
    with pytest.raises(ConvergenceError):
        sb_diamond_with_error(rough, 0.5, 4, Grading(2.0, 8), tol=1e-12)


def test_grading_edges():
    e = Grading(2.0, 8).edges(1.0)
    assert e[0] == 0.0 and e[-1] == 1.0
    assert np.all(np.diff(np.diff(e)) < 0)  # cells shrink toward s = t
    with pytest.raises(ArgumentError):
        Grading(0.5, 8)
    with pytest.raises(ArgumentError):
        Grading(2.0, 4)
