import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from overlapdr.datagen import PRESETS
from overlapdr.diagnostics import (
    MavAccumulator,
    Population,
    ResidualSet,
    finite_sample_error,
    interval_index,
    interval_means,
    phi_mass,
    population_mask,
    residuals,
    sate,
    scaled_relative_mav,
    subpop_error,
)
from overlapdr.estimators import estimate_dr
from overlapdr.models import ModelSpec, fit_models, get_spec


@pytest.mark.parametrize("spec", ["correct", "ps_wrong", "outcome_wrong", "both_omit"])
def test_error_identity(poor_data, spec):
    d = poor_data
    fits = fit_models(d.x, d.z, d.y_obs, get_spec(spec))
    delta, res = finite_sample_error(d, fits)
    tau_dr = estimate_dr(d.z, d.y_obs, fits.ps.e_hat, fits.outcome.mu0_hat, fits.outcome.mu1_hat)
    assert abs((tau_dr - sate(d)) - delta) < 1e-10 * max(1.0, abs(tau_dr))
    np.testing.assert_array_equal(res.product, res.r_e * res.r_y)


def test_residual_definitions():
    z = np.array([1.0, 0.0])
    res = residuals(z, y0=np.array([1.0, 2.0]), y1=np.array([3.0, 4.0]),
                    e_hat=np.array([0.5, 0.25]), mu0_hat=np.array([0.0, 1.0]),
                    mu1_hat=np.array([2.0, 2.0]))
    np.testing.assert_allclose(res.r_e, [0.5, -0.25])
    np.testing.assert_allclose(res.r_y, [1 / 0.5 + 1 / 0.5, 2 / 0.25 + 1 / 0.75])


def test_interval_partition_is_additive(good_data):
    d = good_data
    fits = fit_models(d.x, d.z, d.y_obs, ModelSpec())
    delta, res = finite_sample_error(d, fits)
    means, counts = interval_means(res.product, d.e_true)
    assert counts.sum() == d.n
    ok = counts > 0
    assert np.sum(means[ok] * counts[ok]) / d.n == pytest.approx(delta, abs=1e-12)


def test_interval_index_edges():
    e = np.array([1e-9, 0.01, 0.0100001, 0.5, 0.995, 1.0])
    np.testing.assert_array_equal(interval_index(e), [0, 0, 1, 49, 99, 99])


def test_tail_and_bulk_counts():
    e = np.linspace(0.001, 0.999, 100)
    assert population_mask(e, "tail").sum() == 10
    assert population_mask(e, Population.BULK).sum() == 50
    assert population_mask(e, "overall").all()
    tail = population_mask(e, "tail", rule="threshold")
    assert tail.sum() == np.sum((e < 0.05) | (e > 0.95))
    with pytest.raises(ValueError):
        population_mask(e, "tail", rule="quartile")


def test_subpop_error_empty_is_nan():
    res = ResidualSet(np.ones(4), np.ones(4))
    e = np.full(4, 0.5)
    assert np.isnan(subpop_error(res, e, "tail", rule="threshold"))
    assert subpop_error(res, e, "bulk", rule="threshold") == 1.0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(20, 200), elements=st.floats(0.001, 0.999)))
def test_bulk_and_tail_disjoint(e):
    tail = population_mask(e, "tail")
    bulk = population_mask(e, "bulk")
    assert not np.any(tail & bulk)


def test_mav_accumulator_skips_nan():
    acc = MavAccumulator(3)
    acc.add([1.0, np.nan, -2.0])
    acc.add([-3.0, np.nan, 2.0])
    other = MavAccumulator(3)
    other.add([2.0, 4.0, np.nan])
    acc.merge(other)
    np.testing.assert_allclose(acc.mean, [0.0, 4.0, 0.0])
    np.testing.assert_allclose(acc.mav, [2.0, 4.0, 2.0])
    np.testing.assert_array_equal(acc.count, [3, 1, 2])


def test_scaled_relative_mav():
    rel, scaled = scaled_relative_mav([2.0, 1.0, 1.0], [1.0, 0.0, 2.0], [0.1, 0.2, 0.3])
    np.testing.assert_allclose(rel, [2.0, np.inf, 0.5])
    np.testing.assert_allclose(scaled, [0.2, np.inf, 0.15])


def test_phi_mass():
    res = phi_mass(PRESETS["p40_d3"], 20_000, np.random.default_rng(0))
    assert res.phi.shape == (100,)
    assert res.phi.sum() == pytest.approx(1.0)
    assert res.counts.sum() == 20_000
    np.testing.assert_array_equal(res.counts, res.counts_treated + res.counts_control)
    assert 0.3 < res.tail_fraction < 0.42
    assert res.edges[0] == 0.0 and res.edges[-1] == 1.0
