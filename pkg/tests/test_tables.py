import csv

import numpy as np

from overlapdr.datagen import PRESETS
from overlapdr.harness import RunConfig, run
from overlapdr.tables import METRIC_COLUMNS, TABLE2_COLUMNS, emit_tables, write_csv

EXPECTED = {"table1.csv", "table2.csv", "table3.csv", "subpop_error.csv", "figure_data.csv",
            "interval_stats.csv", "tableA1.csv", "ps_hist.csv", "sweep.csv"}


def _result():
    cfg = RunConfig(scenarios=(PRESETS["p40_d1"],), sample_sizes=(150,), n_replicates=6,
                    primary_n=150, phi_n=1000)
    return run(cfg)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_emit_tables(tmp_path):
    written = emit_tables(_result(), tmp_path)
    assert {p.name for p in written} == EXPECTED
    t1 = _read(tmp_path / "table1.csv")
    assert list(t1[0]) == METRIC_COLUMNS
    assert {r["spec"] for r in t1} == {"correct"}
    assert len(t1) == 11
    t2 = _read(tmp_path / "table2.csv")
    assert list(t2[0]) == TABLE2_COLUMNS
    kinds = {(r["spec"], r["misspec_type"], r["misspecified_model"]) for r in t2}
    assert ("ps_wrong", "wrong_form", "ps") in kinds
    assert ("both_omit", "omit_vars", "both") in kinds
    assert (tmp_path / "table3.csv").read_bytes() == (tmp_path / "subpop_error.csv").read_bytes()
    assert len(_read(tmp_path / "ps_hist.csv")) == 100


def test_outputs_byte_identical(tmp_path):
    emit_tables(_result(), tmp_path / "a")
    emit_tables(_result(), tmp_path / "b")
    for name in EXPECTED:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_write_csv_formats(tmp_path):
    p = write_csv(tmp_path / "x.csv", ["a", "b", "c"],
                  [dict(a=None, b=np.float64(0.1), c=float("nan")), dict(a=3)])
    lines = p.read_text().splitlines()
    assert lines == ["a,b,c", "none,0.1,nan", "3,none,none"]
    assert float(lines[1].split(",")[1]) == 0.1
