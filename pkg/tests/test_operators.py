import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agediffusion.errors import ArgumentError, SpectralPointError, ValidationError
from agediffusion.operators import (
    MatrixOperator,
    OperatorParams,
    commutativity_residual,
    hille_yosida_estimate,
    matrix_handle,
    operator_norm_estimate,
    resolvent_decay_fit,
    resolvent_power,
    seeded_probes,
)


def test_resolvent_power_scalar():
    op = matrix_handle([[-1.0]])
    assert resolvent_power(op, 1.0, 2, [1.0]) == pytest.approx([0.25], abs=1e-15)


def test_resolvent_power_of_zero():
    op = matrix_handle(np.diag([-1.0, -2.0]))
    assert np.all(resolvent_power(op, 3.0, 1, np.zeros(2)) == 0)


def test_resolvent_power_diagonal():
    op = matrix_handle(np.diag([-1.0, -2.0]))
    assert resolvent_power(op, 0.0, 3, [1.0, 1.0]) == pytest.approx([1.0, 0.125], abs=1e-15)


def test_resolvent_power_rejects_small_lambda_and_k():
    op = matrix_handle([[-1.0]])
    with pytest.raises(ArgumentError):
        resolvent_power(op, -5.0, 1, [1.0])
    with pytest.raises(ArgumentError):
        resolvent_power(op, 1.0, 0, [1.0])


def test_spectral_point():
    op = matrix_handle([[2.0]], params=OperatorParams(omega_A=0.0, M_A=1.0, eta=0.25))
    with pytest.raises(SpectralPointError):
        op.resolvent(2.0, [1.0])


def test_matrix_operator_validation():
    with pytest.raises(ArgumentError):
        MatrixOperator(2, np.eye(3))
    with pytest.raises(ArgumentError):
        MatrixOperator(1, [[np.inf]])
    with pytest.raises(ArgumentError):
        MatrixOperator(2, np.eye(2), domain_projection=[[1.0, 1.0], [0.0, 0.5]])
    P = np.array([[1.0, 0.0], [0.0, 0.0]])
    op = matrix_handle(MatrixOperator(2, -np.eye(2), domain_projection=P))
    assert op.in_closure(np.array([1.0, 0.0]))
    assert not op.in_closure(np.array([0.0, 1.0]))


def test_params_invariants():
    good = OperatorParams(omega_A=0.0, M_A=1.0, p=2.0, p_star=4 / 3, q_star=4.0, alpha=0.3, eta=0.25, r=5.0)
    assert good.violations() == []
    bad = OperatorParams(omega_A=1.0, M_A=1.0, p=2.0, p_star=4 / 3, q_star=4.0, alpha=0.3, eta=0.5, r=5.0)
    with pytest.raises(ValidationError):
        bad.validate()
    bad_r = OperatorParams(omega_A=0.0, M_A=1.0, p=2.0, p_star=4 / 3, q_star=4.0, alpha=0.3, eta=0.5, r=1.5)
    assert any("r" in msg for msg in bad_r.violations())


def test_semigroup_at_zero_is_identity():
    op = matrix_handle([[-1.0, 2.0], [0.0, -3.0]])
    x = np.array([0.3, -0.7])
    assert np.all(op.semigroup_part(0.0, x) == x)


def test_hille_yosida_scalar():
    est = hille_yosida_estimate(matrix_handle([[-1.0]]), [0.0, 1.0, 2.0], 3)
    assert est.omega_est == pytest.approx(-1.0)
    assert est.M_est == pytest.approx(1.0, abs=1e-12)


def test_hille_yosida_normal_matrix():
    est = hille_yosida_estimate(matrix_handle(np.diag([-1.0, -2.0])), [0.0, 1.0, 2.0], 3)
    assert est.M_est == pytest.approx(1.0, abs=1e-10)


def test_hille_yosida_non_normal_against_svd():
    m = np.array([[-1.0, 10.0], [0.0, -1.0]])
    grid = [5.0, 6.0, 8.0]  # above the log-norm bound 4.5 used as omega_A
    est = hille_yosida_estimate(matrix_handle(m), grid, 2)
    oracle = max(
        np.linalg.svd(np.linalg.matrix_power(np.linalg.inv(lam * np.eye(2) - m), k), compute_uv=False)[0]
        * (lam + 1.0) ** k
        for lam in grid
        for k in (1, 2)
    )
    assert est.M_est > 1
    assert est.M_est == pytest.approx(oracle, rel=1e-8)


def test_hille_yosida_argument_errors():
    op = matrix_handle([[-1.0]])
    with pytest.raises(ArgumentError):
        hille_yosida_estimate(op, [], 1)
    with pytest.raises(ArgumentError):
        hille_yosida_estimate(op, [1.0, 0.5], 1)


def test_norm_estimate_matches_svd():
    rng = np.random.default_rng(4)
    m = -2 * np.eye(5) + rng.standard_normal((5, 5))
    op = matrix_handle(m)
    lam = op.params.omega_A + 1.0
    got = operator_norm_estimate(op, lam, 2)
    oracle = np.linalg.svd(np.linalg.matrix_power(np.linalg.inv(lam * np.eye(5) - m), 2), compute_uv=False)[0]
    assert got == pytest.approx(oracle, rel=1e-9)


def test_commutativity_trivial_cases():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(3)
    a = matrix_handle(-np.eye(3))
    b = matrix_handle(rng.standard_normal((3, 3)) - 5 * np.eye(3))
    assert commutativity_residual(a, b, 1.0, 1.0, x) <= 1e-12
    a = matrix_handle(np.diag([-1.0, -2.0]))
    b = matrix_handle(np.diag([-3.0, -4.0]))
    assert commutativity_residual(a, b, 1.0, 1.0, x[:2]) <= 1e-12


def test_non_commuting_pair_is_detected():
    a = matrix_handle([[-1.0, 1.0], [0.0, -2.0]])
    b = matrix_handle([[-1.0, 0.0], [1.0, -2.0]])
    assert commutativity_residual(a, b, 1.0, 1.0, np.array([1.0, 1.0])) > 1e-3


def test_decay_fit_matrix_slope_is_minus_one():
    op = matrix_handle(np.diag([-1.0, -2.0]))
    fit = resolvent_decay_fit(op, np.logspace(2, 5, 6), None)
    assert fit.slope == pytest.approx(-1.0, abs=1e-2)


def test_decay_fit_argument_errors():
    op = matrix_handle([[-1.0]])
    with pytest.raises(ArgumentError):
        resolvent_decay_fit(op, [1.0, 10.0, 100.0], None)
    with pytest.raises(ArgumentError):
        resolvent_decay_fit(op, np.logspace(0, 2, 6), None)


def test_seeded_probes_are_reproducible():
    a, b = seeded_probes(4, 3), seeded_probes(4, 3)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


@st.composite
def matrix_and_lambdas(draw):
    n = draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    m = -np.eye(n) + 0.5 * rng.standard_normal((n, n))
    lam = draw(st.floats(0.5, 20.0))
    mu = draw(st.floats(0.5, 20.0))
    return m, lam, mu, rng.standard_normal(n)


@given(matrix_and_lambdas())
@settings(max_examples=60, deadline=None)
def test_resolvent_identity(case):
    m, lam, mu, x = case
    op = matrix_handle(m)
    lam += op.params.omega_A
    mu += op.params.omega_A
    lhs = op.resolvent(lam, x) - op.resolvent(mu, x)
    rhs = (mu - lam) * op.resolvent(lam, op.resolvent(mu, x))
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(x))
    assert np.array_equal(resolvent_power(op, lam, 1, x), op.resolvent(lam, x))


@given(matrix_and_lambdas(), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_resolvent_is_linear(case, alpha, beta):
    m, lam, _, x = case
    op = matrix_handle(m)
    lam += op.params.omega_A
    y = np.roll(x, 1) + 0.5
    lhs = op.resolvent(lam, alpha * x + beta * y)
    rhs = alpha * op.resolvent(lam, x) + beta * op.resolvent(lam, y)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(lhs))
