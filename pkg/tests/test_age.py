import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from agediffusion.age import (
    AgeGrid,
    XVector,
    age_diamond,
    age_handle,
    age_params,
    age_resolvent,
    age_semigroup_integral,
    age_shift_semigroup,
    tail_admissible,
    x_norm,
)
from agediffusion.errors import AlignmentError, ArgumentError, DomainError


def cell_average(func, grid):
    e = grid.nodes
    return np.array([quad(func, e[j], e[j + 1], epsabs=1e-14, epsrel=1e-13)[0] for j in range(grid.n_a)]) / grid.delta_a


def test_resolvent_of_inflow_is_exponential():
    grid = AgeGrid(4.0, 400)
    got = age_resolvent(1.0, [1.0], np.zeros(400), grid)
    assert np.all(got.head == 0)
    assert np.max(np.abs(got.tail[:, 0] - cell_average(lambda a: np.exp(-a), grid))) < 1e-13


def test_resolvent_of_exponential_tail():
    # psi enters as a cell average, so the error is second order in the cell width
    errors = []
    for n in (400, 800):
        grid = AgeGrid(4.0, n)
        psi = cell_average(lambda a: np.exp(-a), grid)
        got = age_resolvent(1.0, [0.0], psi, grid)
        oracle = cell_average(lambda a: a * np.exp(-a), grid)
        errors.append(np.max(np.abs(got.tail[:, 0] - oracle)))
        assert errors[-1] < 0.1 * grid.delta_a ** 2
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.05)


def test_resolvent_against_quadrature_for_smooth_tail():
    grid = AgeGrid(2.0, 2000)
    lam = 3.0
    psi_fn = lambda s: np.cos(2 * s) * np.exp(-s)
    psi = cell_average(psi_fn, grid)
    got = age_resolvent(lam, [0.5], psi, grid).tail[:, 0]
    for j in (0, 37, 999, 1999):
        a = grid.centers[j]
        oracle = 0.5 * np.exp(-lam * a) + quad(lambda s: np.exp(-lam * (a - s)) * psi_fn(s), 0, a)[0]
        assert got[j] == pytest.approx(oracle, abs=1e-6)


def test_resolvent_rejects_nonpositive_lambda():
    with pytest.raises(ArgumentError):
        age_resolvent(0.0, [1.0], np.zeros(10), AgeGrid(1.0, 10))


def test_per_component_rates():
    grid = AgeGrid(1.0, 50)
    both = age_resolvent(np.array([1.0, 2.0]), [1.0, 1.0], np.zeros((50, 2)), grid)
    one = age_resolvent(2.0, [1.0], np.zeros(50), grid)
    assert np.allclose(both.tail[:, 1], one.tail[:, 0], rtol=0, atol=1e-15)


def test_shift_identity_and_indicator():
    grid = AgeGrid(1.0, 10)
    tail = np.zeros(10)
    tail[0] = 1.0
    x = XVector([0.0], tail)
    assert np.array_equal(age_shift_semigroup(0.0, x, grid).tail, x.tail)
    moved = age_shift_semigroup(grid.delta_a, x, grid).tail[:, 0]
    assert moved[1] == 1.0 and moved.sum() == 1.0


def test_shift_errors():
    grid = AgeGrid(1.0, 10)
    with pytest.raises(AlignmentError):
        age_shift_semigroup(0.05, XVector([0.0], np.ones(10)), grid)
    with pytest.raises(DomainError):
        age_shift_semigroup(0.1, XVector([1.0], np.ones(10)), grid)


@given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 2 ** 31))
@settings(max_examples=50, deadline=None)
def test_shift_is_semigroup_and_contraction(m, n, seed):
    grid = AgeGrid(2.0, 40)
    rng = np.random.default_rng(seed)
    x = XVector(np.zeros(2), rng.standard_normal((40, 2)))
    t, s = m * grid.delta_a, n * grid.delta_a
    both = age_shift_semigroup(t + s, x, grid)
    twice = age_shift_semigroup(t, age_shift_semigroup(s, x, grid), grid)
    assert np.array_equal(both.tail, twice.tail)
    assert x_norm(both, grid) <= x_norm(x, grid) + 1e-15


def test_resolvent_is_laplace_transform_of_shift():
    grid = AgeGrid(3.0, 600)
    lam = 2.0
    psi = cell_average(lambda a: np.exp(-a) * np.sin(3 * a), grid)
    x = XVector([0.0], psi)
    # trapezoid over the aligned shifts; truncation e^(-lam a_max) is negligible
    total = np.zeros_like(psi)
    for n in range(grid.n_a + 1):
        w = 0.5 if n in (0, grid.n_a) else 1.0
        total += w * grid.delta_a * np.exp(-lam * n * grid.delta_a) * age_shift_semigroup(n * grid.delta_a, x, grid).tail[:, 0]
    direct = age_resolvent(lam, [0.0], psi, grid).tail[:, 0]
    assert np.max(np.abs(total - direct)) < 1e-4


def test_semigroup_integral_matches_shift_sum():
    grid = AgeGrid(1.0, 100)
    rng = np.random.default_rng(0)
    x = XVector(np.zeros(1), rng.standard_normal((100, 1)))
    t = 0.3
    n = grid.steps(t)
    trap = sum(
        (0.5 if k in (0, n) else 1.0) * age_shift_semigroup(k * grid.delta_a, x, grid).tail for k in range(n + 1)
    ) * grid.delta_a
    assert np.max(np.abs(age_semigroup_integral(t, x, grid).tail - trap)) < 1e-14


def test_diamond_constant_inflow():
    grid = AgeGrid(1.0, 20)
    t = 0.5
    n = grid.steps(t)
    got = age_diamond(np.full(n, 2.0), np.zeros((n, 20)), t, grid).tail[:, 0]
    expected = np.where(grid.centers < t, 2.0, 0.0)
    assert np.array_equal(got, expected)


def test_diamond_inflow_is_reproduced_exactly():
    grid = AgeGrid(1.0, 20)
    t = 0.7
    n = grid.steps(t)
    g = np.cos(np.arange(n))
    got = age_diamond(g, np.zeros((n, 20)), t, grid).tail[:, 0]
    assert np.array_equal(got[:n], g[::-1])


def test_diamond_zero_data():
    grid = AgeGrid(1.0, 20)
    assert not np.any(age_diamond(np.zeros(10), np.zeros((10, 20)), 0.5, grid).tail)


def test_diamond_age_independent_forcing():
    grid = AgeGrid(2.0, 40)
    t = 0.75
    n = grid.steps(t)
    h_cells = np.sin(3 * (np.arange(n) + 0.5) * grid.delta_a) + 1.0
    h = np.repeat(h_cells[:, None], 40, axis=1)
    got = age_diamond(np.zeros(n), h, t, grid).tail[:, 0]

    def h_pc(s):
        return h_cells[min(int(s / grid.delta_a), n - 1)]

    # the forcing is piecewise constant, so the transported integral is linear on each age cell
    oracle = []
    for a in grid.centers:
        lo = max(0.0, t - a)
        edges = np.unique(np.concatenate([[lo, t], np.arange(n + 1) * grid.delta_a]))
        edges = edges[(edges >= lo) & (edges <= t)]
        oracle.append(sum(h_pc(0.5 * (u + v)) * (v - u) for u, v in zip(edges, edges[1:])))
    assert np.max(np.abs(got - np.array(oracle))) < 1e-14


def test_tail_admissibility():
    grid = AgeGrid(10.0, 1000)
    fast = XVector([0.0], np.exp(-5 * grid.centers))
    slow = XVector([0.0], np.exp(-0.1 * grid.centers))
    assert tail_admissible(fast, grid)
    assert not tail_admissible(slow, grid)


def test_age_params_derivation():
    prm = age_params(2.0, 0.5)
    assert prm.M_A == pytest.approx(np.sqrt(2.0))
    assert prm.eta > max(0.0, prm.omega_A)


def test_handle_round_trip():
    grid = AgeGrid(1.0, 8)
    op = age_handle(grid, d=2)
    v = np.arange(18, dtype=float)
    v[:2] = 0
    assert op.in_closure(v)
    assert np.array_equal(op.semigroup_part(0.0, v), v)
    assert op.norm(v) == pytest.approx(x_norm(XVector.from_flat(v, 8, 2), grid))
