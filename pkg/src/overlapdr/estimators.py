"""Average-treatment-effect estimators.

Point estimators take plain arrays. :func:`estimate_all` evaluates a grid
of (method, trim) cells on one dataset, fitting each working model once and
isolating failures to the cells that depend on them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .models import (
    FittedModels,
    Form,
    ModelSpec,
    OutcomeFit,
    RankDeficientError,
    build_design,
    fit_logistic,
    fit_outcome,
)


class Method(str, Enum):
    OM = "OM"
    IPW_HT = "IPW_HT"
    IPW_HAJEK = "IPW_Hajek"
    DR = "DR"
    OW = "OW"


TRIMMABLE = (Method.IPW_HT, Method.IPW_HAJEK, Method.DR)


class EstimationError(ValueError):
    reason = "estimation_failed"


class PropensityError(EstimationError):
    """An estimated propensity is exactly 0 or 1."""

    reason = "extreme_ps"

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class EmptyArmEstimationError(EstimationError):
    reason = "empty_arm"


class TrimError(EstimationError):
    reason = "trim_empty_arm"


@dataclass(frozen=True)
class EstimatorConfig:
    method: Method
    trim_delta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.method not in TRIMMABLE:
            object.__setattr__(self, "trim_delta", None)
        elif self.trim_delta is not None:
            delta = float(self.trim_delta)
            if not 0.0 < delta < 0.5:
                raise ValueError(f"trim_delta must lie in (0, 0.5), got {delta}")
            object.__setattr__(self, "trim_delta", delta)

    @property
    def label(self) -> str:
        if self.trim_delta is None:
            return self.method.value
        return f"{self.method.value}@{self.trim_delta:g}"


def make_grid(methods: Iterable = tuple(Method), trims: Iterable = (None, 0.05, 0.1)) -> tuple:
    """Cross methods with trim levels; OM and OW collapse to one untrimmed cell."""
    seen = {}
    trims = list(trims)
    for m in methods:
        for t in trims:
            cfg = EstimatorConfig(Method(m), t)
            seen.setdefault(cfg, None)
    return tuple(seen)


DEFAULT_GRID = make_grid()


def _check_ps(e_hat):
    bad = np.nonzero((e_hat <= 0.0) | (e_hat >= 1.0) | ~np.isfinite(e_hat))[0]
    if bad.size:
        i = int(bad[0])
        raise PropensityError(f"estimated propensity {e_hat[i]!r} at unit {i}", index=i)


def _check_arms(z):
    n1 = float(np.sum(z))
    if n1 == 0 or n1 == z.shape[0]:
        raise EmptyArmEstimationError("an arm is empty")


def estimate_om(outcome_fit: OutcomeFit | None = None, mu0_hat=None, mu1_hat=None) -> float:
    """Mean predicted potential-outcome difference."""
    if outcome_fit is not None:
        mu0_hat, mu1_hat = outcome_fit.mu0_hat, outcome_fit.mu1_hat
    return float(np.mean(np.asarray(mu1_hat) - np.asarray(mu0_hat)))


def estimate_ipw_ht(z, y_obs, e_hat) -> float:
    """Horvitz-Thompson IPW: weighted sums divided by N."""
    z, y, e = (np.asarray(a, dtype=np.float64) for a in (z, y_obs, e_hat))
    _check_ps(e)
    return float((np.sum(z * y / e) - np.sum((1.0 - z) * y / (1.0 - e))) / z.shape[0])


def estimate_ipw_hajek(z, y_obs, e_hat) -> float:
    """IPW with weights normalized to sum to one within each arm."""
    z, y, e = (np.asarray(a, dtype=np.float64) for a in (z, y_obs, e_hat))
    _check_ps(e)
    _check_arms(z)
    w1 = z / e
    w0 = (1.0 - z) / (1.0 - e)
    return float(np.sum(w1 * y) / np.sum(w1) - np.sum(w0 * y) / np.sum(w0))


def estimate_dr(z, y_obs, e_hat, mu0_hat, mu1_hat) -> float:
    """Augmented IPW (doubly-robust) estimator."""
    z, y, e, m0, m1 = (np.asarray(a, dtype=np.float64) for a in (z, y_obs, e_hat, mu0_hat, mu1_hat))
    _check_ps(e)
    treated = np.mean(m1 + z * (y - m1) / e)
    control = np.mean(m0 + (1.0 - z) * (y - m0) / (1.0 - e))
    return float(treated - control)


def estimate_ow(z, y_obs, e_hat) -> float:
    """Overlap weighting: treated weighted by 1 - e, controls by e."""
    z, y, e = (np.asarray(a, dtype=np.float64) for a in (z, y_obs, e_hat))
    w1 = z * (1.0 - e)
    w0 = (1.0 - z) * e
    s1, s0 = np.sum(w1), np.sum(w0)
    if s1 == 0 or s0 == 0:
        raise EmptyArmEstimationError("overlap weights sum to zero in an arm")
    return float(np.sum(w1 * y) / s1 - np.sum(w0 * y) / s0)


def apply_trim(z, e_hat, delta: float) -> np.ndarray:
    """Indices with ``delta <= e_hat <= 1 - delta``.

    Raises ``TrimError`` when the retained set lacks either arm.
    """
    if not 0.0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 0.5), got {delta}")
    e_hat = np.asarray(e_hat)
    idx = np.nonzero((e_hat >= delta) & (e_hat <= 1.0 - delta))[0]
    zs = np.asarray(z)[idx]
    if idx.size == 0 or zs.min() == zs.max():
        raise TrimError(f"trimming at {delta} leaves {idx.size} units with fewer than two arms")
    return idx


@dataclass
class Cell:
    estimate: float
    n_used: int
    reason: str | None = None

    @property
    def missing(self) -> bool:
        return self.reason is not None


@dataclass
class EstimateSet:
    cells: dict = field(default_factory=dict)
    fits: FittedModels | None = None

    def __getitem__(self, key) -> Cell:
        if isinstance(key, tuple):
            key = EstimatorConfig(*key)
        elif not isinstance(key, EstimatorConfig):
            key = EstimatorConfig(key)
        return self.cells[key]

    def __len__(self):
        return len(self.cells)

    def populated(self) -> int:
        return sum(not c.missing for c in self.cells.values())

    def as_dict(self) -> dict[str, float]:
        return {cfg.label: cell.estimate for cfg, cell in self.cells.items()}


_FAILURES = (EstimationError, RankDeficientError, ValueError, np.linalg.LinAlgError)


def _reason(exc) -> str:
    if isinstance(exc, EstimationError):
        return exc.reason
    if isinstance(exc, RankDeficientError):
        return "rank_deficient"
    return "fit_failed"


class FitCache:
    """Per-dataset memo of working-model fits, shared across model specs.

    Keys are the propensity form and trim level that define a subsample,
    plus the outcome form for outcome fits; failures are memoized too.
    """

    def __init__(self, x, z, y_obs, outcome_mode: str = "per_arm", refit_after_trim: bool = True):
        self.x = np.asarray(x, dtype=np.float64)
        self.z = np.asarray(z, dtype=np.float64)
        self.y = np.asarray(y_obs, dtype=np.float64)
        self.outcome_mode = outcome_mode
        self.refit_after_trim = refit_after_trim
        self._store: dict = {}
        self._designs: dict = {}

    def _memo(self, key, fn):
        if key not in self._store:
            try:
                self._store[key] = (True, fn())
            except _FAILURES as exc:
                self._store[key] = (False, exc)
        ok, val = self._store[key]
        if not ok:
            raise val
        return val

    def design(self, form: Form) -> np.ndarray:
        if form not in self._designs:
            self._designs[form] = build_design(self.x, form)
        return self._designs[form]

    def ps(self, ps_form: Form, delta: float | None = None):
        """``(idx, e_hat)`` for the subsample defined by ``(ps_form, delta)``."""
        def compute():
            full = self.ps_fit(ps_form)
            if delta is None:
                return None, full.e_hat
            idx = apply_trim(self.z, full.e_hat, delta)
            if not self.refit_after_trim:
                return idx, full.e_hat[idx]
            refit = fit_logistic(self.design(ps_form)[idx], self.z[idx])
            return idx, refit.e_hat
        return self._memo(("ps", ps_form, delta), compute)

    def ps_fit(self, ps_form: Form):
        return self._memo(("psfit", ps_form),
                          lambda: fit_logistic(self.design(ps_form), self.z))

    def outcome_fit(self, outcome_form: Form) -> OutcomeFit:
        return self._memo(("outfit", outcome_form),
                          lambda: fit_outcome(self.design(outcome_form), self.z, self.y,
                                              mode=self.outcome_mode))

    def mu(self, outcome_form: Form, ps_form: Form | None = None, delta: float | None = None):
        """``(mu0_hat, mu1_hat)`` on the subsample ``(ps_form, delta)``."""
        if delta is None:
            fit = self.outcome_fit(outcome_form)
            return fit.mu0_hat, fit.mu1_hat

        def compute():
            idx, _ = self.ps(ps_form, delta)
            if not self.refit_after_trim:
                fit = self.outcome_fit(outcome_form)
                return fit.mu0_hat[idx], fit.mu1_hat[idx]
            fit = fit_outcome(self.design(outcome_form)[idx], self.z[idx], self.y[idx],
                              mode=self.outcome_mode)
            return fit.mu0_hat, fit.mu1_hat
        return self._memo(("mu", outcome_form, ps_form, delta), compute)

    def subsample(self, idx):
        if idx is None:
            return self.z, self.y
        return self.z[idx], self.y[idx]


def evaluate_cell(cfg: EstimatorConfig, spec: ModelSpec, cache: FitCache) -> Cell:
    n = cache.z.shape[0]
    try:
        if cfg.method is Method.OM:
            m0, m1 = cache.mu(spec.outcome_form)
            return Cell(estimate_om(mu0_hat=m0, mu1_hat=m1), n)
        idx, e = cache.ps(spec.ps_form, cfg.trim_delta)
        z, y = cache.subsample(idx)
        if cfg.method is Method.OW:
            return Cell(estimate_ow(z, y, e), n)
        if cfg.method is Method.IPW_HT:
            value = estimate_ipw_ht(z, y, e)
        elif cfg.method is Method.IPW_HAJEK:
            value = estimate_ipw_hajek(z, y, e)
        else:
            m0, m1 = cache.mu(spec.outcome_form, spec.ps_form, cfg.trim_delta)
            value = estimate_dr(z, y, e, m0, m1)
        return Cell(value, z.shape[0])
    except _FAILURES as exc:
        return Cell(float("nan"), 0, _reason(exc))


def estimate_all(x, z, y_obs, spec: ModelSpec = ModelSpec(), grid=DEFAULT_GRID,
                 refit_after_trim: bool = True, outcome_mode: str = "per_arm",
                 cache: FitCache | None = None) -> EstimateSet:
    """Evaluate every configured estimator on one dataset.

    Failed cells are returned with ``estimate=nan`` and a reason code; the
    call itself does not raise for fitting or estimation failures.
    """
    if cache is None:
        cache = FitCache(x, z, y_obs, outcome_mode=outcome_mode,
                         refit_after_trim=refit_after_trim)
    out = EstimateSet()
    for cfg in grid:
        out.cells[cfg] = evaluate_cell(cfg, spec, cache)
    try:
        out.fits = FittedModels(ps=cache.ps_fit(spec.ps_form),
                                outcome=cache.outcome_fit(spec.outcome_form))
    except _FAILURES:
        out.fits = None
    return out
