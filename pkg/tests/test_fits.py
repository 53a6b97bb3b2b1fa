import numpy as np
import pytest

from agediffusion.age import AgeGrid
from agediffusion.coupled import CoupledSpace
from agediffusion.errors import ArgumentError
from agediffusion.fits import (
    FitReport,
    RegularityEnvelope,
    age_resolvent_fit,
    forcing_probes,
    interior_resolvent_fit,
    regularity_envelope,
    run_fit,
    tb_singularity_fit,
)


def test_fit_report_band():
    assert FitReport("x", -0.52, -0.5, 0.05).passed
    assert not FitReport("x", -0.56, -0.5, 0.05).passed


def test_unknown_target():
    with pytest.raises(ArgumentError):
        run_fit("nope")


def test_tb_fit_in_band():
    assert tb_singularity_fit().passed


def test_age_fit_with_few_probes():
    assert age_resolvent_fit(n_probes=8).passed


def test_fits_need_three_decades():
    with pytest.raises(ArgumentError):
        age_resolvent_fit(n_a=1000, n_probes=2, lambdas=np.logspace(1, 3, 6))


def test_interior_directions_decay_like_one_over_lambda():
    assert interior_resolvent_fit(K=128, n_probes=16).passed


def test_forcing_probe_kinds():
    space = CoupledSpace(AgeGrid(1.0, 10), 4)
    probes = forcing_probes(space, 4)
    vals = [space.split(f(0.3)) for f in probes]
    assert np.any(vals[0][0]) and not np.any(vals[0][1])  # inflow only
    assert not np.any(vals[1][0]) and not np.any(vals[1][1][:, :2])  # interior tail
    assert np.any(vals[2][1][:, :2])  # boundary data
    assert np.any(vals[3][0]) and np.any(vals[3][1])


def test_envelope_ordering_follows_time():
    ratios = np.array([[0.3, 0.1], [0.5, 0.2], [0.2, 0.1]])
    env = RegularityEnvelope((0.2, 0.4, 0.1), ratios)
    assert np.allclose(env.envelope, [0.3, 0.5, 0.2])
    assert env.decreasing
    assert not RegularityEnvelope((0.4, 0.2), np.array([[0.1], [0.2]])).decreasing


def test_small_regularity_envelope_decreases():
    env = regularity_envelope(n_a=40, K=16, n_probes=4)
    assert np.all(np.isfinite(env.ratios)) and env.decreasing
