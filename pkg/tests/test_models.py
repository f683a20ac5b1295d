import numpy as np
import pytest

from overlapdr.models import (
    MODEL_SPECS,
    Form,
    ModelSpec,
    RankDeficientError,
    build_design,
    fit_logistic,
    fit_models,
    fit_outcome,
    get_spec,
)


def test_seven_specs():
    assert len(MODEL_SPECS) == 7
    assert get_spec("correct") == ModelSpec(Form.CORRECT, Form.CORRECT)
    assert get_spec("outcome_omit") == ModelSpec(Form.CORRECT, Form.OMIT_VARS)
    assert get_spec("both_wrong").name == "both_wrong"
    with pytest.raises(KeyError):
        get_spec("nope")


def test_design_forms(rng):
    x = rng.standard_normal((10, 6))
    d = build_design(x, Form.CORRECT)
    np.testing.assert_array_equal(d[:, 0], 1.0)
    np.testing.assert_array_equal(d[:, 1:], x)
    w = build_design(x, Form.WRONG_FORM)
    assert w.shape == (10, 7)
    np.testing.assert_array_equal(w[:, 3], x[:, 2] ** 2)
    np.testing.assert_array_equal(w[:, [1, 2, 4, 5, 6]], x[:, [0, 1, 3, 4, 5]])
    o = build_design(x, Form.OMIT_VARS)
    np.testing.assert_array_equal(o[:, 1:], x[:, [0, 1, 4, 5]])
    with pytest.raises(RankDeficientError):
        build_design(x[:4], Form.CORRECT)


def test_design_accepts_any_width_when_correct(rng):
    assert build_design(rng.standard_normal((8, 2))).shape == (8, 3)
    with pytest.raises(ValueError):
        build_design(rng.standard_normal((8, 2)), Form.WRONG_FORM)


def test_fit_logistic_needs_both_arms(rng):
    with pytest.raises(ValueError):
        fit_logistic(build_design(rng.standard_normal((20, 6))), np.ones(20))


def test_joint_outcome_matches_lstsq(good_data):
    d = build_design(good_data.x)
    fit = fit_outcome(d, good_data.z, good_data.y_obs, mode="joint")
    ref = np.linalg.lstsq(np.column_stack([d, good_data.z]), good_data.y_obs, rcond=None)[0]
    np.testing.assert_allclose(fit.coef, ref, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(fit.mu1_hat - fit.mu0_hat, ref[-1])


def test_per_arm_outcome_matches_lstsq(good_data):
    d = build_design(good_data.x)
    fit = fit_outcome(d, good_data.z, good_data.y_obs, mode="per_arm")
    t = good_data.z == 1
    b1 = np.linalg.lstsq(d[t], good_data.y_obs[t], rcond=None)[0]
    np.testing.assert_allclose(fit.mu1_hat, d @ b1, rtol=1e-10, atol=1e-10)
    assert fit.dropped == ()


def test_per_arm_drops_constant_binary():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((60, 6))
    x[:, 3:] = (x[:, 3:] > 0)
    z = np.zeros(60)
    z[:15] = 1
    x[:15, 3] = 0.0  # constant in the treated arm
    y = x @ np.arange(1.0, 7.0) + z
    fit = fit_outcome(build_design(x), z, y, mode="per_arm")
    assert fit.dropped == (("treated", 4),)
    assert fit.coef[7 + 4] == 0.0
    np.testing.assert_allclose(fit.mu1_hat[:15], y[:15], atol=1e-9)


def test_joint_rank_deficiency_names_column(rng):
    x = rng.standard_normal((40, 6))
    x[:, 5] = x[:, 0] + x[:, 1]
    z = (rng.random(40) < 0.5).astype(float)
    with pytest.raises(RankDeficientError) as err:
        fit_outcome(build_design(x), z, rng.standard_normal(40), mode="joint")
    assert err.value.column == 6


def test_unknown_outcome_mode(good_data):
    with pytest.raises(ValueError):
        fit_outcome(build_design(good_data.x), good_data.z, good_data.y_obs, mode="pooled")


def test_fit_models_correct_spec_recovers_truth():
    from overlapdr.datagen import PRESETS, make_dataset

    ds = make_dataset(PRESETS["p40_d1"], 200_000, np.random.default_rng(0))
    fits = fit_models(ds.x, ds.z, ds.y_obs, ModelSpec())
    sc = PRESETS["p40_d1"]
    np.testing.assert_allclose(fits.ps.coef, [sc.alpha0, *sc.alpha], atol=0.04)
    assert fits.ps.converged and not fits.ps.separated
    np.testing.assert_allclose(fits.outcome.coef[1:7], sc.beta, atol=0.03)
