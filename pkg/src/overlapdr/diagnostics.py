"""Finite-sample error of the DR estimator and its residual decomposition.

``Delta = tau_dr - SATE`` equals the mean over units of ``r_e * r_y`` where
``r_e = z - e_hat`` and
``r_y = (y1 - mu1_hat) / e_hat + (y0 - mu0_hat) / (1 - e_hat)``. Everything
here needs both potential outcomes, so it only applies to simulated data.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .datagen import Scenario, make_dataset
from .estimators import _check_ps
from .models import FittedModels

N_INTERVALS = 100
QUANTITIES = ("r_e", "r_y", "product")


class Population(str, Enum):
    OVERALL = "overall"
    TAIL = "tail"
    BULK = "bulk"


@dataclass
class ResidualSet:
    r_e: np.ndarray
    r_y: np.ndarray

    @property
    def product(self) -> np.ndarray:
        return self.r_e * self.r_y

    def quantity(self, name: str) -> np.ndarray:
        if name == "r_e":
            return self.r_e
        if name == "r_y":
            return self.r_y
        if name == "product":
            return self.product
        raise ValueError(f"unknown quantity {name!r}")


def sate(dataset=None, y0=None, y1=None) -> float:
    if dataset is not None:
        y0, y1 = dataset.y0, dataset.y1
    return float(np.mean(np.asarray(y1) - np.asarray(y0)))


def residuals(z, y0, y1, e_hat, mu0_hat, mu1_hat) -> ResidualSet:
    e = np.asarray(e_hat, dtype=np.float64)
    _check_ps(e)
    r_e = np.asarray(z, dtype=np.float64) - e
    r_y = (np.asarray(y1) - mu1_hat) / e + (np.asarray(y0) - mu0_hat) / (1.0 - e)
    return ResidualSet(r_e=r_e, r_y=r_y)


def finite_sample_error(dataset, fits: FittedModels) -> tuple[float, ResidualSet]:
    """``(Delta, residuals)`` for the full-sample fits on ``dataset``."""
    res = residuals(dataset.z, dataset.y0, dataset.y1, fits.ps.e_hat,
                    fits.outcome.mu0_hat, fits.outcome.mu1_hat)
    return float(np.mean(res.product)), res


def population_mask(e_hat, population: Population | str, rule: str = "percentile") -> np.ndarray:
    """Membership of the overall, tail or bulk population.

    ``rule="percentile"``: tail is outside the 5th-95th empirical percentiles
    of ``e_hat`` and bulk within the 25th-75th (linear interpolation, boundary
    units counted as inner). ``rule="threshold"`` uses the raw values
    0.05/0.95 and 0.25/0.75 instead.
    """
    e = np.asarray(e_hat)
    population = Population(population)
    if population is Population.OVERALL:
        return np.ones(e.shape[0], dtype=bool)
    if rule == "percentile":
        q05, q25, q75, q95 = np.quantile(e, [0.05, 0.25, 0.75, 0.95])
    elif rule == "threshold":
        q05, q25, q75, q95 = 0.05, 0.25, 0.75, 0.95
    else:
        raise ValueError(f"unknown population rule {rule!r}")
    if population is Population.TAIL:
        return (e < q05) | (e > q95)
    return (e >= q25) & (e <= q75)


def subpop_error(res: ResidualSet, e_hat, population, rule: str = "percentile") -> float:
    """Mean of ``r_e * r_y`` over the population; nan when it is empty."""
    mask = population_mask(e_hat, population, rule)
    if not mask.any():
        return float("nan")
    return float(np.mean(res.product[mask]))


def interval_index(e, n_intervals: int = N_INTERVALS) -> np.ndarray:
    """Interval of each value on the grid (0, 1/k], (1/k, 2/k], ..., ((k-1)/k, 1)."""
    idx = np.ceil(np.asarray(e, dtype=np.float64) * n_intervals).astype(np.int64) - 1
    return np.clip(idx, 0, n_intervals - 1)


def interval_means(values, e_true, n_intervals: int = N_INTERVALS) -> tuple[np.ndarray, np.ndarray]:
    """Within-interval averages of ``values`` binned by true PS.

    Returns ``(means, counts)``; intervals without units have mean nan.
    """
    idx = interval_index(e_true, n_intervals)
    counts = np.bincount(idx, minlength=n_intervals)
    sums = np.bincount(idx, weights=np.asarray(values, dtype=np.float64), minlength=n_intervals)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return means, counts


def interval_mav(res: ResidualSet, e_true, quantity: str = "product",
                 n_intervals: int = N_INTERVALS) -> np.ndarray:
    """Per-interval average of one residual quantity within one replicate."""
    return interval_means(res.quantity(quantity), e_true, n_intervals)[0]


class MavAccumulator:
    """Running mean and mean-absolute-value of per-replicate values.

    Nan entries (empty subpopulation or interval) are skipped per slot, so
    each slot averages only the replicates where it was observed.
    """

    def __init__(self, shape=()):
        self.sum = np.zeros(shape)
        self.abs_sum = np.zeros(shape)
        self.count = np.zeros(shape, dtype=np.int64)

    def add(self, values):
        v = np.asarray(values, dtype=np.float64)
        ok = np.isfinite(v)
        self.sum += np.where(ok, v, 0.0)
        self.abs_sum += np.where(ok, np.abs(v), 0.0)
        self.count += ok

    def merge(self, other: "MavAccumulator"):
        self.sum += other.sum
        self.abs_sum += other.abs_sum
        self.count += other.count

    @property
    def mean(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 0, self.sum / np.maximum(self.count, 1), np.nan)

    @property
    def mav(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.count > 0, self.abs_sum / np.maximum(self.count, 1), np.nan)


def scaled_relative_mav(mav_misspec, mav_correct, phi):
    """``(mav_misspec / mav_correct) * phi`` per interval (nan where undefined)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.asarray(mav_misspec) / np.asarray(mav_correct)
    return rel, rel * np.asarray(phi)


@dataclass
class PhiResult:
    phi: np.ndarray
    counts: np.ndarray
    counts_treated: np.ndarray
    counts_control: np.ndarray
    tail_fraction: float

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.phi.shape[0] + 1)


def phi_mass(scenario: Scenario, n: int = 100_000, rng: np.random.Generator | None = None,
             n_intervals: int = N_INTERVALS) -> PhiResult:
    """Empirical distribution of the true PS over the 0.01-wide intervals.

    Also returns by-treatment counts and the fraction of units with true PS
    outside (0.05, 0.95).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    data = make_dataset(scenario, n, rng)
    idx = interval_index(data.e_true, n_intervals)
    counts = np.bincount(idx, minlength=n_intervals)
    treated = data.z == 1
    c1 = np.bincount(idx[treated], minlength=n_intervals)
    c0 = np.bincount(idx[~treated], minlength=n_intervals)
    e = data.e_true
    tail = float(np.mean((e <= 0.05) | (e >= 0.95)))
    return PhiResult(phi=counts / counts.sum(), counts=counts, counts_treated=c1,
                     counts_control=c0, tail_fraction=tail)
