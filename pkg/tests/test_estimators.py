import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from overlapdr.estimators import (
    DEFAULT_GRID,
    EstimatorConfig,
    FitCache,
    Method,
    PropensityError,
    TrimError,
    apply_trim,
    estimate_all,
    estimate_dr,
    estimate_ipw_hajek,
    estimate_ipw_ht,
    estimate_om,
    estimate_ow,
    make_grid,
)
from overlapdr.models import ModelSpec, build_design, fit_logistic, fit_outcome, get_spec

# four-unit example worked by hand
Z = np.array([1.0, 1.0, 0.0, 0.0])
Y = np.array([3.0, 5.0, 1.0, 2.0])
E = np.array([0.5, 0.25, 0.5, 0.75])
MU1 = np.array([3.0, 4.0, 6.0, 4.0])
MU0 = np.array([1.0, 1.0, 1.0, 1.5])


def test_hand_values():
    assert estimate_ipw_ht(Z, Y, E) == pytest.approx(4.0, abs=1e-15)
    assert estimate_ipw_hajek(Z, Y, E) == pytest.approx(8.0 / 3.0, abs=1e-15)
    assert estimate_ow(Z, Y, E) == pytest.approx(2.6, abs=1e-15)
    assert estimate_om(mu0_hat=MU0, mu1_hat=MU1) == pytest.approx(3.125, abs=1e-15)
    assert estimate_dr(Z, Y, E, MU0, MU1) == pytest.approx(3.625, abs=1e-15)


def test_extreme_ps_rejected():
    e = E.copy()
    e[2] = 1.0
    with pytest.raises(PropensityError) as err:
        estimate_dr(Z, Y, e, MU0, MU1)
    assert err.value.index == 2 and err.value.reason == "extreme_ps"
    with pytest.raises(PropensityError):
        estimate_ipw_ht(Z, Y, np.array([0.5, 0.0, 0.5, 0.5]))


def test_trim_boundaries_inclusive():
    e = np.array([0.03, 0.05, 0.5, 0.95, 0.96, 0.5])
    z = np.array([1, 1, 1, 0, 0, 0])
    np.testing.assert_array_equal(apply_trim(z, e, 0.05), [1, 2, 3, 5])
    with pytest.raises(TrimError):
        apply_trim(np.array([1, 0, 0]), np.array([0.01, 0.5, 0.5]), 0.1)
    with pytest.raises(ValueError):
        apply_trim(z, e, 0.5)


def test_config_normalizes_trim():
    assert EstimatorConfig("OM", 0.1).trim_delta is None
    assert EstimatorConfig(Method.OW, 0.05).trim_delta is None
    assert EstimatorConfig("DR", 0.05).label == "DR@0.05"
    with pytest.raises(ValueError):
        EstimatorConfig("DR", 0.6)
    with pytest.raises(ValueError):
        EstimatorConfig("AIPW")


def test_default_grid_has_eleven_cells():
    assert len(DEFAULT_GRID) == 11
    assert len(make_grid(["OM", "OW"], [None, 0.05, 0.1])) == 2


def test_estimate_all_matches_direct_fits(good_data):
    d = good_data
    res = estimate_all(d.x, d.z, d.y_obs, ModelSpec())
    design = build_design(d.x)
    ps = fit_logistic(design, d.z)
    out = fit_outcome(design, d.z, d.y_obs)
    assert res["DR"].estimate == pytest.approx(
        estimate_dr(d.z, d.y_obs, ps.e_hat, out.mu0_hat, out.mu1_hat), abs=1e-12)
    assert res["OM"].estimate == pytest.approx(estimate_om(out), abs=1e-12)
    assert res[("IPW_Hajek", None)].estimate == pytest.approx(
        estimate_ipw_hajek(d.z, d.y_obs, ps.e_hat), abs=1e-12)
    assert res.populated() == 11


def test_trimmed_cell_refits_on_subsample(poor_data):
    d = poor_data
    res = estimate_all(d.x, d.z, d.y_obs, ModelSpec())
    design = build_design(d.x)
    idx = apply_trim(d.z, fit_logistic(design, d.z).e_hat, 0.1)
    ps = fit_logistic(design[idx], d.z[idx])
    out = fit_outcome(design[idx], d.z[idx], d.y_obs[idx])
    cell = res[("DR", 0.1)]
    assert cell.n_used == idx.size < d.n
    assert cell.estimate == pytest.approx(
        estimate_dr(d.z[idx], d.y_obs[idx], ps.e_hat, out.mu0_hat, out.mu1_hat), abs=1e-12)

    no_refit = estimate_all(d.x, d.z, d.y_obs, ModelSpec(), refit_after_trim=False)
    assert no_refit[("DR", 0.1)].estimate != cell.estimate


def test_estimate_all_isolates_failures():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((12, 6))
    z = np.zeros(12)
    z[0] = 1.0
    res = estimate_all(x, z, rng.standard_normal(12), ModelSpec(), outcome_mode="joint")
    assert len(res) == 11
    trimmed = [c for cfg, c in res.cells.items() if cfg.trim_delta is not None]
    assert all(c.missing for c in trimmed)
    assert {c.reason for c in trimmed} <= {"trim_empty_arm", "extreme_ps", "fit_failed",
                                           "rank_deficient", "empty_arm"}


def test_fit_cache_reuses_fits(good_data):
    d = good_data
    cache = FitCache(d.x, d.z, d.y_obs)
    a = estimate_all(d.x, d.z, d.y_obs, get_spec("ps_wrong"), cache=cache)
    b = estimate_all(d.x, d.z, d.y_obs, get_spec("ps_wrong"))
    assert a.as_dict() == b.as_dict()
    assert cache.outcome_fit(get_spec("ps_wrong").outcome_form) is cache.outcome_fit(
        get_spec("correct").outcome_form)


# -- randomized properties --------------------------------------------------

finite = st.floats(-50, 50, allow_nan=False)


@st.composite
def samples(draw, min_n=4, max_n=40):
    n = draw(st.integers(min_n, max_n))
    z = draw(arrays(np.float64, n, elements=st.sampled_from([0.0, 1.0])))
    z[0], z[1] = 1.0, 0.0
    y = draw(arrays(np.float64, n, elements=finite))
    e = draw(arrays(np.float64, n, elements=st.floats(0.01, 0.99)))
    m0 = draw(arrays(np.float64, n, elements=finite))
    m1 = draw(arrays(np.float64, n, elements=finite))
    return z, y, e, m0, m1


@settings(max_examples=200, deadline=None)
@given(samples())
def test_dr_equals_om_when_outcome_fits_exactly(s):
    z, _, e, m0, m1 = s
    y = np.where(z == 1, m1, m0)
    assert estimate_dr(z, y, e, m0, m1) == pytest.approx(
        estimate_om(mu0_hat=m0, mu1_hat=m1), rel=1e-12, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(samples())
def test_dr_equals_ht_with_zero_predictions(s):
    z, y, e, _, _ = s
    zero = np.zeros_like(y)
    assert estimate_dr(z, y, e, zero, zero) == pytest.approx(
        estimate_ipw_ht(z, y, e), rel=1e-12, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(samples(), st.floats(-1e3, 1e3))
def test_normalized_weights_ignore_translation(s, c):
    z, y, e, _, _ = s
    for est in (estimate_ipw_hajek, estimate_ow):
        assert est(z, y + c, e) == pytest.approx(est(z, y, e), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(samples(), st.floats(0.1, 10))
def test_scale_equivariance(s, a):
    z, y, e, m0, m1 = s
    assert estimate_dr(z, a * y, e, a * m0, a * m1) == pytest.approx(
        a * estimate_dr(z, y, e, m0, m1), rel=1e-9, abs=1e-8)
