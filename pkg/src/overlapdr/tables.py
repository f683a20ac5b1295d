"""CSV emitters for harness results.

All files are UTF-8 with a header row and a fixed column order; a result
with no rows still produces the header.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .harness import RunResult, interval_table, subpop_table
from .models import Form, get_spec

METRIC_COLUMNS = ["scenario", "prevalence", "d", "n", "spec", "estimator", "trim",
                  "rmse", "bias", "mc_se_bias", "missing_rate", "n_valid"]
TABLE2_COLUMNS = METRIC_COLUMNS[:5] + ["misspec_type", "misspecified_model"] + METRIC_COLUMNS[5:]
SUBPOP_COLUMNS = ["scenario", "n", "spec", "population", "mean", "mav", "n_replicates"]
INTERVAL_COLUMNS = ["scenario", "panel", "spec", "quantity", "interval_lo", "interval_hi",
                    "mav", "phi", "relative_mav", "scaled_relative_mav"]
A1_COLUMNS = ["scenario", "prevalence", "d", "alpha0", "tail_pct", "calibrated_alpha0"]
HIST_COLUMNS = ["scenario", "interval_lo", "interval_hi", "count_treated", "count_control", "phi"]


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
    return path


def _misspec_labels(spec_name: str) -> tuple[str, str]:
    spec = get_spec(spec_name)
    forms = {spec.ps_form, spec.outcome_form} - {Form.CORRECT}
    kind = forms.pop().value if forms else "none"
    wrong_ps = spec.ps_form is not Form.CORRECT
    wrong_out = spec.outcome_form is not Form.CORRECT
    which = "both" if wrong_ps and wrong_out else "ps" if wrong_ps else "outcome" if wrong_out else "none"
    return kind, which


def metric_dicts(result: RunResult, n: int | None = None, specs=None) -> list[dict]:
    scen = {s.name: s for s in result.config.scenarios}
    out = []
    for r in result.metrics.rows:
        if n is not None and r.n != n:
            continue
        if specs is not None and r.spec not in specs:
            continue
        sc = scen[r.scenario]
        row = dict(scenario=r.scenario, prevalence=sc.prevalence_target, d=sc.d, n=r.n,
                   spec=r.spec, estimator=r.method, trim=r.trim, rmse=r.rmse, bias=r.bias,
                   mc_se_bias=r.mc_se_bias, missing_rate=r.missing_rate, n_valid=r.n_valid)
        row["misspec_type"], row["misspecified_model"] = _misspec_labels(r.spec)
        out.append(row)
    return out


def emit_tables(result: RunResult, out_dir: str | Path) -> list[Path]:
    """Write every table/figure CSV for ``result`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not out.is_dir():
        raise OSError(f"cannot write to {out}")
    primary = result.config.primary_n
    misspec = [s for s in result.config.model_specs if s != "correct"]
    written = [
        write_csv(out / "table1.csv", METRIC_COLUMNS, metric_dicts(result, primary, ["correct"])),
        write_csv(out / "table2.csv", TABLE2_COLUMNS, metric_dicts(result, primary, misspec)),
    ]
    subpop = subpop_table(result)
    written.append(write_csv(out / "table3.csv", SUBPOP_COLUMNS, subpop))
    written.append(write_csv(out / "subpop_error.csv", SUBPOP_COLUMNS, subpop))
    intervals = interval_table(result)
    written.append(write_csv(out / "figure_data.csv", INTERVAL_COLUMNS, intervals))
    written.append(write_csv(out / "interval_stats.csv", INTERVAL_COLUMNS, intervals))

    a1, hist = [], []
    for sc in result.config.scenarios:
        phi = result.phi.get(sc.name)
        a1.append(dict(scenario=sc.name, prevalence=sc.prevalence_target, d=sc.d,
                       alpha0=sc.alpha0,
                       tail_pct=100.0 * phi.tail_fraction if phi is not None else float("nan"),
                       calibrated_alpha0=result.calibrated.get(sc.name, float("nan"))))
        if phi is not None:
            edges = phi.edges
            for i in range(phi.phi.shape[0]):
                hist.append(dict(scenario=sc.name, interval_lo=float(edges[i]),
                                 interval_hi=float(edges[i + 1]),
                                 count_treated=int(phi.counts_treated[i]),
                                 count_control=int(phi.counts_control[i]),
                                 phi=float(phi.phi[i])))
    written.append(write_csv(out / "tableA1.csv", A1_COLUMNS, a1))
    written.append(write_csv(out / "ps_hist.csv", HIST_COLUMNS, hist))
    written.append(write_csv(out / "sweep.csv", METRIC_COLUMNS, metric_dicts(result)))
    return written
