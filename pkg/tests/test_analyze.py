import numpy as np
import pytest

from overlapdr.analyze import (
    AnalysisSpec,
    DataError,
    bootstrap,
    export_ps_histogram,
    from_arrays,
    ingest_csv,
    run_analysis,
    write_report,
)
from overlapdr.datagen import PRESETS, make_dataset
from overlapdr.estimators import Method

COVS = [f"x{j}" for j in range(1, 7)]


def spec(**kw):
    base = dict(treatment_col="z", outcome_col="y_obs", covariate_cols=COVS,
                bootstrap_reps=30, seed=3)
    base.update(kw)
    return AnalysisSpec(**base)


@pytest.fixture
def csv_path(tmp_path):
    ds = make_dataset(PRESETS["p40_d1"], 300, np.random.default_rng(21))
    path = tmp_path / "data.csv"
    ds.to_csv(path)
    return path, ds


def test_ingest_round_trip_bit_exact(csv_path):
    path, ds = csv_path
    data = ingest_csv(path, spec())
    np.testing.assert_array_equal(data.x, ds.x)
    np.testing.assert_array_equal(data.z, ds.z)
    np.testing.assert_array_equal(data.y, ds.y_obs)
    assert data.n_treated + data.n_control == 300


def _write(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    return p


@pytest.mark.parametrize("body, msg", [
    ("t,y,a\n1,2,3\n0,,4\n", "row 2: missing value in column 'y'"),
    ("t,y,a\n1,2,3\n0,1,abc\n", "row 2: column 'a' is not numeric"),
    ("t,y,a\n1,2,3\n2,1,4\n", "row 2: treatment column 't' must be 0 or 1"),
    ("t,y,a\n1,2,3\n1,1,4\n", "only one treatment arm"),
    ("t,y\n1,2\n0,1\n", "column 'a' not found"),
    ("t,y,a\n", "no data rows"),
    ("t,y,a\n1,2,inf\n0,1,1\n", "row 1: non-finite"),
])
def test_ingest_errors(tmp_path, body, msg):
    with pytest.raises(DataError, match=msg):
        ingest_csv(_write(tmp_path, body), spec(treatment_col="t", outcome_col="y",
                                                covariate_cols=["a"]))


def test_spec_validation():
    with pytest.raises(ValueError):
        spec(ci_level=1.5)
    with pytest.raises(ValueError):
        spec(ci_method="bca")
    assert len(spec(trim_levels=()).grid) == 5


def test_bootstrap_deterministic_and_thread_free(csv_path):
    data = ingest_csv(csv_path[0], spec())
    a = bootstrap(data, spec())
    b = bootstrap(data, spec(threads=2))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (30, len(spec().grid))
    c = bootstrap(data, spec(seed=4))
    assert not np.array_equal(a, c)


def test_run_analysis_report(csv_path, tmp_path):
    data = ingest_csv(csv_path[0], spec())
    rep = run_analysis(data, spec())
    dr = rep.get("DR")
    assert abs(dr.estimate - 1.0) < 0.5
    assert dr.ci_lower < dr.estimate < dr.ci_upper
    assert dr.ci_upper - dr.ci_lower == pytest.approx(2 * 1.959963984540054 * dr.sd)
    assert rep.get("DR", 0.1).n_used <= data.n
    assert rep.ps_converged
    assert sum(h["count_treated"] for h in rep.ps_hist) == data.n_treated
    files = write_report(rep, tmp_path / "out")
    assert [f.name for f in files] == ["effects.csv", "ps_hist.csv"]
    pct = run_analysis(data, spec(ci_method="percentile")).get("OM")
    assert pct.ci_lower < pct.ci_upper


def test_from_arrays_and_histogram():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 2))
    z = (rng.random(200) < 0.5).astype(float)
    y = x[:, 0] + 2 * z + rng.standard_normal(200)
    data = from_arrays(x, z, y)
    assert data.covariate_names == ["x1", "x2"]
    rep = run_analysis(data, spec(covariate_cols=["x1", "x2"], methods=(Method.DR, Method.OM),
                                  trim_levels=()))
    assert abs(rep.get("OM").estimate - 2.0) < 0.4
    hist = export_ps_histogram([0.0, 0.5, 1.0], [1, 0, 1], bins=2)
    assert hist[0]["count_treated"] == 1 and hist[1]["count_treated"] == 1
    assert hist[1]["count_control"] == 1
