"""Observational-data workflow: ingest a CSV, fit, estimate, bootstrap.

Point estimates use the same estimator grid as the simulations with
main-effects working models. Uncertainty comes from a nonparametric
bootstrap that resamples rows and refits both working models each time.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .estimators import FitCache, Method, estimate_all, evaluate_cell, make_grid
from .models import ModelSpec

DEFAULT_METHODS = (Method.DR, Method.IPW_HAJEK, Method.IPW_HT, Method.OM, Method.OW)
_MISSING = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    pass


@dataclass
class AnalysisSpec:
    treatment_col: str
    outcome_col: str
    covariate_cols: Sequence[str]
    trim_levels: Sequence[float] = (0.05, 0.1)
    bootstrap_reps: int = 1000
    ci_level: float = 0.95
    seed: int = 0
    ci_method: str = "normal"
    methods: Sequence[Method] = DEFAULT_METHODS
    outcome_mode: str = "per_arm"
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.ci_method not in ("normal", "percentile"):
            raise ValueError(f"unknown ci_method {self.ci_method!r}")
        if self.bootstrap_reps < 0:
            raise ValueError("bootstrap_reps must be non-negative")

    @property
    def grid(self) -> tuple:
        return make_grid(self.methods, [None, *self.trim_levels])


@dataclass
class AnalysisData:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    covariate_names: list

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated


def _parse(value: str, row: int, col: str) -> float:
    if value is None or value.strip().lower() in _MISSING:
        raise DataError(f"row {row}: missing value in column {col!r}")
    try:
        out = float(value)
    except ValueError:
        raise DataError(f"row {row}: column {col!r} is not numeric ({value!r})") from None
    if not math.isfinite(out):
        raise DataError(f"row {row}: non-finite value in column {col!r}")
    return out


def ingest_csv(path: str | Path, spec: AnalysisSpec) -> AnalysisData:
    """Read and validate the treatment, outcome and covariate columns.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [spec.treatment_col, spec.outcome_col, *spec.covariate_cols]
        for col in needed:
            if col not in header:
                raise DataError(f"column {col!r} not found in {path}")
        zs, ys, xs = [], [], []
        for i, rec in enumerate(reader, start=1):
            t = _parse(rec[spec.treatment_col], i, spec.treatment_col)
            if t not in (0.0, 1.0):
                raise DataError(f"row {i}: treatment column {spec.treatment_col!r} "
                                f"must be 0 or 1, got {rec[spec.treatment_col]!r}")
            zs.append(t)
            ys.append(_parse(rec[spec.outcome_col], i, spec.outcome_col))
            xs.append([_parse(rec[c], i, c) for c in spec.covariate_cols])
    if not zs:
        raise DataError(f"{path} has no data rows")
    data = AnalysisData(x=np.array(xs, dtype=np.float64).reshape(len(zs), -1),
                        z=np.array(zs), y=np.array(ys), covariate_names=list(spec.covariate_cols))
    if data.n_treated == 0 or data.n_control == 0:
        raise DataError(f"only one treatment arm present ({data.n_treated} treated, "
                        f"{data.n_control} control)")
    return data


def from_arrays(x, z, y, names=None) -> AnalysisData:
    x = np.asarray(x, dtype=np.float64)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(x.shape[1])]
    return AnalysisData(x=x, z=np.asarray(z, dtype=np.float64),
                        y=np.asarray(y, dtype=np.float64), covariate_names=names)


@dataclass
class EffectRow:
    estimator: str
    trim: float | None
    estimate: float
    sd: float
    ci_lower: float
    ci_upper: float
    n_used: int
    boot_failures: int
    unstable: bool


@dataclass
class EffectReport:
    rows: list
    ps_hist: list
    n: int
    n_treated: int
    ps_converged: bool
    bootstrap_reps: int
    boot_estimates: np.ndarray = field(repr=False, default=None)

    def get(self, estimator: str, trim: float | None = None) -> EffectRow:
        estimator = Method(estimator).value
        for r in self.rows:
            if r.estimator == estimator and r.trim == trim:
                return r
        raise KeyError((estimator, trim))


def _boot_seed(seed: int, b: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(b,))))


def _boot_chunk(args):
    x, z, y, reps, seed, grid, outcome_mode = args
    n = z.shape[0]
    out = np.empty((len(reps), len(grid)))
    spec = ModelSpec()
    for k, b in enumerate(reps):
        idx = _boot_seed(seed, b).integers(0, n, n)
        cache = FitCache(x[idx], z[idx], y[idx], outcome_mode=outcome_mode)
        for c, cfg in enumerate(grid):
            out[k, c] = evaluate_cell(cfg, spec, cache).estimate
    return out


def bootstrap(data: AnalysisData, spec: AnalysisSpec, chunk: int = 50) -> np.ndarray:
    """``(bootstrap_reps, cells)`` matrix of re-estimates; failed cells are nan."""
    grid = spec.grid
    reps = range(spec.bootstrap_reps)
    tasks = [(data.x, data.z, data.y, reps[i:i + chunk], spec.seed, grid, spec.outcome_mode)
             for i in range(0, len(reps), chunk)]
    if not tasks:
        return np.empty((0, len(grid)))
    if spec.threads > 1:
        with ProcessPoolExecutor(max_workers=spec.threads) as pool:
            parts = list(pool.map(_boot_chunk, tasks))
    else:
        parts = [_boot_chunk(t) for t in tasks]
    return np.vstack(parts)


def export_ps_histogram(e_hat, z, bins: int = 50) -> list[dict]:
    """Counts per equal-width PS bin on [0, 1], by treatment arm."""
    e_hat = np.asarray(e_hat)
    z = np.asarray(z)
    edges = np.linspace(0.0, 1.0, bins + 1)
    c1, _ = np.histogram(e_hat[z == 1], bins=edges)
    c0, _ = np.histogram(e_hat[z == 0], bins=edges)
    return [dict(bin_lo=float(edges[i]), bin_hi=float(edges[i + 1]),
                 count_treated=int(c1[i]), count_control=int(c0[i])) for i in range(bins)]


def run_analysis(data: AnalysisData, spec: AnalysisSpec, hist_bins: int = 50) -> EffectReport:
    grid = spec.grid
    point = estimate_all(data.x, data.z, data.y, ModelSpec(), grid=grid,
                         outcome_mode=spec.outcome_mode)
    boots = bootstrap(data, spec)
    zq = norm.ppf(0.5 + spec.ci_level / 2.0)
    rows = []
    for c, cfg in enumerate(grid):
        cell = point.cells[cfg]
        col = boots[:, c] if boots.size else np.empty(0)
        ok = col[np.isfinite(col)]
        failures = int(col.shape[0] - ok.shape[0])
        sd = float(np.std(ok, ddof=1)) if ok.shape[0] > 1 else float("nan")
        if spec.ci_method == "normal":
            lo, hi = float(cell.estimate - zq * sd), float(cell.estimate + zq * sd)
        elif ok.shape[0] > 1:
            a = (1.0 - spec.ci_level) / 2.0
            lo, hi = (float(v) for v in np.quantile(ok, [a, 1.0 - a]))
        else:
            lo = hi = float("nan")
        rows.append(EffectRow(estimator=cfg.method.value, trim=cfg.trim_delta,
                              estimate=cell.estimate, sd=sd, ci_lower=lo, ci_upper=hi,
                              n_used=cell.n_used, boot_failures=failures,
                              unstable=failures > 0.1 * max(spec.bootstrap_reps, 1)))
    ps = point.fits.ps if point.fits is not None else None
    hist = export_ps_histogram(ps.e_hat, data.z, hist_bins) if ps is not None else []
    return EffectReport(rows=rows, ps_hist=hist, n=data.n, n_treated=data.n_treated,
                        ps_converged=bool(ps is not None and ps.converged),
                        bootstrap_reps=spec.bootstrap_reps, boot_estimates=boots)


EFFECT_COLUMNS = ["estimator", "trim", "estimate", "sd", "ci_lower", "ci_upper", "n_used",
                  "boot_failures", "unstable"]
HIST_COLUMNS = ["bin_lo", "bin_hi", "count_treated", "count_control"]


def write_report(report: EffectReport, out_dir: str | Path) -> list[Path]:
    from .tables import write_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    effects = [dict(r.__dict__) for r in report.rows]
    return [write_csv(out / "effects.csv", EFFECT_COLUMNS, effects),
            write_csv(out / "ps_hist.csv", HIST_COLUMNS, report.ps_hist)]
