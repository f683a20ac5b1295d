"""Monte Carlo study driver.

Every (scenario, n, replicate) triple gets its own generator derived from the
master seed, so results do not depend on worker count or scheduling. Within a
replicate one dataset is drawn and every model specification and estimator
is evaluated on it; reductions run in replicate order.
"""
from __future__ import annotations

import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import ConfigError, read_toml
from .datagen import PRESETS, Scenario, calibrate_intercept, draw_dataset, scenario_from_mapping
from .diagnostics import (
    N_INTERVALS,
    QUANTITIES,
    MavAccumulator,
    Population,
    finite_sample_error,
    interval_means,
    phi_mass,
    population_mask,
    sate,
)
from .estimators import (
    FitCache,
    Method,
    estimate_dr,
    evaluate_cell,
    make_grid,
)
from .models import MODEL_SPECS, FittedModels, get_spec

log = logging.getLogger(__name__)

DEFAULT_SIZES = (100, 300, 500, 1000, 2000)
POPULATIONS = (Population.OVERALL, Population.TAIL, Population.BULK)
PANELS = {(0.4, 1.0): "a", (0.4, 3.0): "b", (0.1, 1.0): "c", (0.1, 3.0): "d"}
_PHI_STREAM = 2**32 - 1


def scenario_id(scenario: Scenario) -> int:
    return zlib.crc32(scenario.name.encode("utf-8"))


def derive_replicate_seed(master_seed: int, scenario_key: int, n: int,
                          replicate_index: int) -> np.random.Generator:
    """Independent generator for one replicate.

    The four integers are hashed by ``SeedSequence`` into a Philox key, so
    nearby tuples give unrelated streams and identical tuples identical ones.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(scenario_key), int(n), int(replicate_index)))
    return np.random.Generator(np.random.Philox(ss))


def is_excluded(scenario: Scenario, n: int) -> bool:
    """Low-prevalence scenarios are not run at n=100 (too many empty arms)."""
    return scenario.prevalence_target <= 0.1 + 1e-9 and n <= 100


@dataclass
class RunConfig:
    scenarios: Sequence[Scenario] = tuple(PRESETS.values())
    sample_sizes: Sequence[int] = DEFAULT_SIZES
    n_replicates: int = 2000
    master_seed: int = 20240601
    model_specs: Sequence[str] = tuple(MODEL_SPECS)
    methods: Sequence[str] = tuple(m.value for m in Method)
    trims: Sequence[float | None] = (None, 0.05, 0.1)
    refit_after_trim: bool = True
    outcome_mode: str = "per_arm"
    tail_rule: str = "percentile"
    primary_n: int = 500
    diagnostics: bool = True
    phi_n: int = 100_000
    calibrate: bool = False
    threads: int = 1
    chunk_size: int = 25

    def __post_init__(self):
        for name in self.model_specs:
            get_spec(name)
        if self.outcome_mode not in ("per_arm", "joint"):
            raise ConfigError(f"unknown outcome_mode {self.outcome_mode!r}", field="outcome_mode")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be positive", field="n_replicates")

    @property
    def grid(self) -> tuple:
        return make_grid(self.methods, self.trims)

    def to_dict(self) -> dict:
        return {
            "scenarios": [s.to_dict() for s in self.scenarios],
            "sample_sizes": list(self.sample_sizes),
            "n_replicates": self.n_replicates,
            "master_seed": self.master_seed,
            "model_specs": list(self.model_specs),
            "methods": list(self.methods),
            "trims": ["none" if t is None else t for t in self.trims],
            "refit_after_trim": self.refit_after_trim,
            "outcome_mode": self.outcome_mode,
            "tail_rule": self.tail_rule,
            "primary_n": self.primary_n,
            "diagnostics": self.diagnostics,
            "phi_n": self.phi_n,
            "calibrate": self.calibrate,
            "threads": self.threads,
        }

    @classmethod
    def from_mapping(cls, data: Mapping) -> "RunConfig":
        run = dict(data.get("run", {}))
        allowed = {f for f in cls.__dataclass_fields__ if f != "scenarios"}
        for key in run:
            if key not in allowed:
                raise ConfigError(f"unknown run key {key!r}", field=f"run.{key}")
        if "trims" in run:
            run["trims"] = [None if (t is None or str(t).lower() == "none") else float(t)
                            for t in run["trims"]]
        for key in ("methods",):
            if key in run:
                for m in run[key]:
                    try:
                        Method(m)
                    except ValueError:
                        raise ConfigError(f"unknown method {m!r}", field=f"run.{key}") from None
        scen_tab = data.get("scenarios")
        if scen_tab:
            scenarios = []
            for name, cfg in scen_tab.items():
                try:
                    scenarios.append(scenario_from_mapping(name, cfg))
                except KeyError as exc:
                    raise ConfigError(str(exc.args[0]), field=f"scenarios.{name}") from None
                except (TypeError, ValueError) as exc:
                    raise ConfigError(str(exc), field=f"scenarios.{name}") from None
            run["scenarios"] = tuple(scenarios)
        try:
            return cls(**run)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), field="run.model_specs") from None

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        return cls.from_mapping(read_toml(path))


@dataclass
class MetricRow:
    scenario: str
    n: int
    spec: str
    method: str
    trim: float | None
    rmse: float
    bias: float
    mc_se_bias: float
    missing_rate: float
    n_valid: int

    @property
    def variance(self) -> float:
        return self.rmse**2 - self.bias**2


def summarize(estimates: np.ndarray, tau: float) -> dict:
    """Bias, RMSE and Monte Carlo SE of the bias over the finite entries."""
    est = np.asarray(estimates, dtype=np.float64)
    ok = np.isfinite(est)
    k = int(ok.sum())
    missing = 1.0 - k / est.shape[0] if est.shape[0] else 0.0
    if k == 0:
        return dict(rmse=np.nan, bias=np.nan, mc_se_bias=np.nan, missing_rate=missing, n_valid=0)
    err = est[ok] - tau
    bias = float(np.mean(err))
    rmse = float(np.sqrt(np.mean(err * err)))
    sd = float(np.std(err, ddof=1)) if k > 1 else np.nan
    return dict(rmse=rmse, bias=bias, mc_se_bias=float(sd / np.sqrt(k)), missing_rate=missing,
                n_valid=k)


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    def get(self, scenario: str, n: int, spec: str, method: str,
            trim: float | None = None) -> MetricRow:
        method = Method(method).value
        for r in self.rows:
            if (r.scenario == scenario and r.n == n and r.spec == spec
                    and r.method == method and r.trim == trim):
                return r
        raise KeyError((scenario, n, spec, method, trim))

    def __len__(self):
        return len(self.rows)


@dataclass
class CellResult:
    """Raw per-replicate output of one (scenario, n) cell."""

    scenario: Scenario
    n: int
    specs: tuple
    grid: tuple
    estimates: np.ndarray            # (reps, specs, cells)
    reasons: list                    # per (spec, cell): {reason: count}
    redraws: int
    subpop: np.ndarray | None = None          # (reps, specs, 3)
    intervals: dict | None = None             # (spec, quantity) -> MavAccumulator
    identity_gap: float = 0.0
    sate_values: np.ndarray | None = None


@dataclass
class RunResult:
    config: RunConfig
    metrics: MetricsTable
    cells: dict                     # (scenario name, n) -> CellResult
    phi: dict                       # scenario name -> PhiResult
    calibrated: dict                # scenario name -> alpha0
    skipped: list

    def cell(self, scenario: str, n: int) -> CellResult:
        return self.cells[(scenario, n)]


def _replicate(scenario, n, rep, master_seed, specs, grid, settings):
    rng = derive_replicate_seed(master_seed, scenario_id(scenario), n, rep)
    data, redraws = draw_dataset(scenario, n, rng)
    cache = FitCache(data.x, data.z, data.y_obs, outcome_mode=settings["outcome_mode"],
                     refit_after_trim=settings["refit_after_trim"])
    est = np.empty((len(specs), len(grid)))
    reasons = []
    for s, spec in enumerate(specs):
        for c, cfg in enumerate(grid):
            cell = evaluate_cell(cfg, spec, cache)
            est[s, c] = cell.estimate
            if cell.reason:
                reasons.append((s, c, cell.reason))
    diag = None
    if settings["diagnostics"]:
        tau_s = sate(data)
        subpop = np.full((len(specs), len(POPULATIONS)), np.nan)
        ints = np.full((len(specs), len(QUANTITIES), N_INTERVALS), np.nan)
        gap = 0.0
        for s, spec in enumerate(specs):
            try:
                psfit = cache.ps_fit(spec.ps_form)
                outfit = cache.outcome_fit(spec.outcome_form)
                delta, res = finite_sample_error(data, FittedModels(psfit, outfit))
            except (ValueError, ArithmeticError):
                continue
            dr = estimate_dr(data.z, data.y_obs, psfit.e_hat, outfit.mu0_hat, outfit.mu1_hat)
            gap = max(gap, abs((dr - tau_s) - delta) / max(1.0, abs(dr)))
            prod = res.product
            for p, pop in enumerate(POPULATIONS):
                mask = population_mask(psfit.e_hat, pop, settings["tail_rule"])
                if mask.any():
                    subpop[s, p] = np.mean(prod[mask])
            for q, qname in enumerate(QUANTITIES):
                ints[s, q] = interval_means(res.quantity(qname), data.e_true)[0]
        diag = (subpop, ints, gap, tau_s)
    return est, reasons, redraws, diag


def _run_chunk(args):
    scenario, n, reps, master_seed, specs, grid, settings = args
    return [_replicate(scenario, n, r, master_seed, specs, grid, settings) for r in reps]


def _simulate_cell(config: RunConfig, scenario: Scenario, n: int, pool) -> CellResult:
    specs = tuple(get_spec(s) for s in config.model_specs)
    grid = config.grid
    settings = dict(outcome_mode=config.outcome_mode, refit_after_trim=config.refit_after_trim,
                    tail_rule=config.tail_rule,
                    diagnostics=config.diagnostics and n == config.primary_n)
    reps = range(config.n_replicates)
    tasks = [(scenario, n, reps[i:i + config.chunk_size], config.master_seed, specs, grid, settings)
             for i in range(0, len(reps), config.chunk_size)]
    mapper = pool.map if pool is not None else map
    est = np.empty((config.n_replicates, len(specs), len(grid)))
    reasons = [[{} for _ in grid] for _ in specs]
    redraws = 0
    subpop = np.full((config.n_replicates, len(specs), len(POPULATIONS)), np.nan) \
        if settings["diagnostics"] else None
    intervals = {(s, q): MavAccumulator(N_INTERVALS) for s in config.model_specs
                 for q in QUANTITIES} if settings["diagnostics"] else None
    sates = np.empty(config.n_replicates) if settings["diagnostics"] else None
    gap = 0.0
    r = 0
    # ordered reduction: results arrive in replicate order regardless of workers
    for chunk in mapper(_run_chunk, tasks):
        for e, rs, rd, diag in chunk:
            est[r] = e
            for s, c, why in rs:
                reasons[s][c][why] = reasons[s][c].get(why, 0) + 1
            redraws += rd
            if diag is not None:
                sp, ints, g, tau_s = diag
                subpop[r] = sp
                sates[r] = tau_s
                gap = max(gap, g)
                for s, sname in enumerate(config.model_specs):
                    for q, qname in enumerate(QUANTITIES):
                        intervals[(sname, qname)].add(np.abs(ints[s, q]))
            r += 1
    return CellResult(scenario=scenario, n=n, specs=tuple(config.model_specs), grid=grid,
                      estimates=est, reasons=reasons, redraws=redraws, subpop=subpop,
                      intervals=intervals, identity_gap=gap, sate_values=sates)


def metrics_from_cell(cell: CellResult) -> list:
    rows = []
    tau = cell.scenario.tau
    for s, spec in enumerate(cell.specs):
        for c, cfg in enumerate(cell.grid):
            stats = summarize(cell.estimates[:, s, c], tau)
            rows.append(MetricRow(scenario=cell.scenario.name, n=cell.n, spec=spec,
                                  method=cfg.method.value, trim=cfg.trim_delta, **stats))
    return rows


def run(config: RunConfig) -> RunResult:
    """Run the configured Monte Carlo grid.

    Bias and RMSE are taken against the population effect ``tau``; cells
    with failed estimates are dropped from their aggregate and counted in
    ``missing_rate``. Excluded (low prevalence, n=100) cells are skipped with
    a note.
    """
    cells, rows, skipped, phis, calibrated = {}, [], [], {}, {}
    pool = ProcessPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for scenario in config.scenarios:
            for n in config.sample_sizes:
                if is_excluded(scenario, n):
                    skipped.append(f"{scenario.name} n={n}: skipped (low prevalence at n=100)")
                    log.info(skipped[-1])
                    continue
                log.info("simulating %s n=%d (%d replicates)", scenario.name, n,
                         config.n_replicates)
                cell = _simulate_cell(config, scenario, n, pool)
                cells[(scenario.name, n)] = cell
                rows.extend(metrics_from_cell(cell))
            if config.diagnostics and config.phi_n > 0:
                rng = derive_replicate_seed(config.master_seed, scenario_id(scenario),
                                            config.phi_n, _PHI_STREAM)
                phis[scenario.name] = phi_mass(scenario, config.phi_n, rng)
            if config.calibrate:
                rng = derive_replicate_seed(config.master_seed, scenario_id(scenario), 0,
                                            _PHI_STREAM)
                calibrated[scenario.name] = calibrate_intercept(
                    scenario.prevalence_target, alpha=scenario.alpha_vec, rng=rng)
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(config=config, metrics=MetricsTable(rows), cells=cells, phi=phis,
                     calibrated=calibrated, skipped=skipped)


def subpop_table(result: RunResult) -> list[dict]:
    """Mean and MAV of the (sub)population finite-sample error per spec."""
    out = []
    for (name, n), cell in result.cells.items():
        if cell.subpop is None:
            continue
        for s, spec in enumerate(cell.specs):
            for p, pop in enumerate(POPULATIONS):
                v = cell.subpop[:, s, p]
                v = v[np.isfinite(v)]
                mean = float(np.mean(v)) if v.size else float("nan")
                mav = float(np.mean(np.abs(v))) if v.size else float("nan")
                out.append(dict(scenario=name, n=n, spec=spec, population=pop.value,
                                mean=mean, mav=mav, n_replicates=int(v.size)))
    return out


def interval_table(result: RunResult, reference: str = "correct") -> list[dict]:
    """Per-interval MAV, relative MAV against ``reference`` and its phi-scaled value."""
    out = []
    edges = np.linspace(0.0, 1.0, N_INTERVALS + 1)
    for (name, n), cell in result.cells.items():
        if cell.intervals is None:
            continue
        phi = result.phi[name].phi if name in result.phi else np.full(N_INTERVALS, np.nan)
        sc = cell.scenario
        panel = PANELS.get((round(sc.prevalence_target, 6), sc.d), "")
        for spec in cell.specs:
            for q in QUANTITIES:
                mav = cell.intervals[(spec, q)].mav
                if (reference, q) in cell.intervals:
                    ref = cell.intervals[(reference, q)].mav
                    with np.errstate(invalid="ignore", divide="ignore"):
                        rel = mav / ref
                else:
                    rel = np.full(N_INTERVALS, np.nan)
                for i in range(N_INTERVALS):
                    out.append(dict(scenario=name, panel=panel, spec=spec, quantity=q,
                                    interval_lo=float(edges[i]), interval_hi=float(edges[i + 1]),
                                    mav=float(mav[i]), phi=float(phi[i]),
                                    relative_mav=float(rel[i]),
                                    scaled_relative_mav=float(rel[i] * phi[i])))
    return out


def with_overrides(config: RunConfig, **kw) -> RunConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(config, **kw) if kw else config
