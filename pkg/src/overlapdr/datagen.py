"""Simulation data-generating process.

Six correlated covariates (three Gaussian, three dichotomized Gaussians), a
logistic treatment assignment and a linear outcome with a homogeneous
treatment effect. Both potential outcomes and the true propensity score are
kept on every dataset so finite-sample quantities can be computed exactly.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit

BASE_ALPHA = (0.2, 0.3, 0.4, -0.25, -0.3, -0.3)
BASE_BETA = (-0.5, -0.8, -1.2, 0.8, 0.8, 1.0)
N_COVARIATES = 6
CORRELATION = 0.5

# intercepts giving prevalence ~0.4 / ~0.1 for overlap multipliers 1 and 3
PRESET_ALPHA0 = {
    (0.4, 1.0): -0.05,
    (0.4, 3.0): 0.37,
    (0.1, 1.0): -2.13,
    (0.1, 3.0): -3.16,
}

CSV_HEADER = [f"x{j + 1}" for j in range(N_COVARIATES)] + ["z", "y_obs", "y0", "y1", "e_true"]


class EmptyArmError(ValueError):
    """A generated dataset has no treated or no control units."""


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Parameters of one data-generating scenario.

    ``shared_noise=True`` draws one outcome error per unit for both
    potential outcomes, so ``y1 - y0 == tau`` exactly. With ``False`` each
    potential outcome gets its own error draw (same marginal law).
    """

    name: str
    prevalence_target: float
    d: float
    alpha0: float
    alpha: tuple[float, ...]
    beta0: float = 0.0
    beta: tuple[float, ...] = BASE_BETA
    tau: float = 1.0
    noise_sd: float = 1.0
    shared_noise: bool = True

    def __post_init__(self):
        if len(self.alpha) != N_COVARIATES or len(self.beta) != N_COVARIATES:
            raise ValueError("alpha and beta must have 6 entries")
        values = (self.alpha0, self.beta0, self.tau, self.noise_sd, *self.alpha, *self.beta)
        if not all(np.isfinite(values)):
            raise ValueError(f"scenario {self.name!r} has non-finite coefficients")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    @property
    def alpha_vec(self) -> np.ndarray:
        return np.asarray(self.alpha, dtype=np.float64)

    @property
    def beta_vec(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=np.float64)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["alpha"] = list(self.alpha)
        out["beta"] = list(self.beta)
        return out


def preset(prevalence: float, d: float, **overrides) -> Scenario:
    """One of the four preset scenarios, e.g. ``preset(0.4, 3)``."""
    key = (round(float(prevalence), 6), float(d))
    if key not in PRESET_ALPHA0:
        raise KeyError(f"no preset for prevalence={prevalence}, d={d}")
    sc = Scenario(
        name=f"p{int(round(100 * prevalence)):02d}_d{int(d)}",
        prevalence_target=key[0],
        d=key[1],
        alpha0=PRESET_ALPHA0[key],
        alpha=tuple(key[1] * a for a in BASE_ALPHA),
    )
    return replace(sc, **overrides) if overrides else sc


PRESETS: dict[str, Scenario] = {
    s.name: s for s in (preset(0.4, 1), preset(0.4, 3), preset(0.1, 1), preset(0.1, 3))
}


def scenario_from_mapping(name: str, cfg: Mapping) -> Scenario:
    """Build a scenario from config keys.

    A ``preset = "p40_d3"`` key starts from that preset; otherwise
    ``prevalence`` and ``d`` are required and ``alpha`` defaults to
    ``d * BASE_ALPHA``. Unknown keys raise ``KeyError`` naming the key.
    """
    allowed = {"preset", "prevalence", "d", "alpha0", "alpha", "beta0", "beta",
               "tau", "noise_sd", "shared_noise"}
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise KeyError(f"scenario {name!r}: unknown key {unknown[0]!r}")
    if "preset" in cfg:
        if cfg["preset"] not in PRESETS:
            raise KeyError(f"scenario {name!r}: unknown preset {cfg['preset']!r}")
        base = PRESETS[cfg["preset"]]
    else:
        for req in ("prevalence", "d"):
            if req not in cfg:
                raise KeyError(f"scenario {name!r}: missing key {req!r}")
        prev, d = float(cfg["prevalence"]), float(cfg["d"])
        alpha0 = cfg.get("alpha0", PRESET_ALPHA0.get((round(prev, 6), d)))
        if alpha0 is None:
            raise KeyError(f"scenario {name!r}: missing key 'alpha0'")
        base = Scenario(name=name, prevalence_target=prev, d=d, alpha0=float(alpha0),
                        alpha=tuple(d * a for a in BASE_ALPHA))
    kw = {"name": name}
    if "prevalence" in cfg:
        kw["prevalence_target"] = float(cfg["prevalence"])
    if "d" in cfg:
        kw["d"] = float(cfg["d"])
    for key in ("alpha0", "beta0", "tau", "noise_sd"):
        if key in cfg:
            kw[key] = float(cfg[key])
    for key in ("alpha", "beta"):
        if key in cfg:
            kw[key] = tuple(float(v) for v in cfg[key])
    if "shared_noise" in cfg:
        kw["shared_noise"] = bool(cfg["shared_noise"])
    return replace(base, **kw)


def load_scenarios(path: str | Path) -> dict[str, Scenario]:
    """Read ``[scenarios.<name>]`` tables from a TOML file."""
    from .config import read_toml

    data = read_toml(path)
    table = data.get("scenarios", data)
    return {name: scenario_from_mapping(name, cfg) for name, cfg in table.items()}


@dataclass
class SimDataset:
    x: np.ndarray
    z: np.ndarray
    y_obs: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    e_true: np.ndarray
    scenario: Scenario | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def to_csv(self, path: str | Path) -> None:
        cols = np.column_stack([self.x, self.z, self.y_obs, self.y0, self.y1, self.e_true])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in cols:
                # repr round-trips float64 exactly
                writer.writerow([repr(float(v)) for v in row])


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an ``n x 6`` covariate matrix.

    The underlying Gaussians are equicorrelated at 0.5, built as one shared
    standard-normal factor plus independent residuals. Columns 4-6 are
    ``1{V < 0}``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    common = rng.standard_normal((n, 1))
    own = rng.standard_normal((n, N_COVARIATES))
    v = np.sqrt(CORRELATION) * common + np.sqrt(1.0 - CORRELATION) * own
    x = v
    x[:, 3:] = (v[:, 3:] < 0).astype(np.float64)
    return x


def true_propensity(x, scenario: Scenario):
    """logistic(alpha0 + alpha' x) for a row or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    return expit(scenario.alpha0 + x @ scenario.alpha_vec)


def make_dataset(scenario: Scenario, n: int, rng: np.random.Generator) -> SimDataset:
    """Draw one dataset. Raises ``EmptyArmError`` if an arm is empty.

    Draw order is fixed (covariates, assignment uniforms, outcome noise) so a
    given generator state always yields the same dataset.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    x = gen_covariates(n, rng)
    e = true_propensity(x, scenario)
    z = (rng.random(n) < e).astype(np.float64)
    mean0 = scenario.beta0 + x @ scenario.beta_vec
    eps = scenario.noise_sd * rng.standard_normal(n)
    y0 = mean0 + eps
    if scenario.shared_noise:
        y1 = y0 + scenario.tau
    else:
        y1 = mean0 + scenario.tau + scenario.noise_sd * rng.standard_normal(n)
    y_obs = z * y1 + (1.0 - z) * y0
    n_treated = int(z.sum())
    if n_treated == 0 or n_treated == n:
        raise EmptyArmError(f"dataset has {n_treated} treated of {n}")
    return SimDataset(x=x, z=z, y_obs=y_obs, y0=y0, y1=y1, e_true=e, scenario=scenario)


def draw_dataset(scenario: Scenario, n: int, rng: np.random.Generator,
                 max_redraws: int = 1000) -> tuple[SimDataset, int]:
    """``make_dataset`` with redraws on empty arms; returns ``(data, redraws)``."""
    for redraws in range(max_redraws + 1):
        try:
            return make_dataset(scenario, n, rng), redraws
        except EmptyArmError:
            continue
    raise EmptyArmError(f"{max_redraws} consecutive datasets had an empty arm")


def calibrate_intercept(prevalence_target: float, d: float = 1.0, alpha=None,
                        rng: np.random.Generator | None = None, n_draw: int = 1_000_000,
                        tol: float = 1e-4, max_iter: int = 200) -> float:
    """Find the PS intercept whose mean propensity equals the target.

    Bisection on the intercept over one fixed covariate draw of ``n_draw``
    units. ``alpha`` defaults to ``d * BASE_ALPHA``.
    """
    if not 0.0 < prevalence_target < 1.0:
        raise ValueError("prevalence_target must lie in (0, 1)")
    if alpha is None:
        alpha = d * np.asarray(BASE_ALPHA)
    alpha = np.asarray(alpha, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(20240101)
    eta = gen_covariates(n_draw, rng) @ alpha

    def excess(a0):
        return float(np.mean(expit(a0 + eta))) - prevalence_target

    lo, hi = -50.0, 50.0
    if excess(lo) > 0 or excess(hi) < 0:
        raise CalibrationError("target prevalence not bracketed")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            return 0.5 * (lo + hi)
    raise CalibrationError(f"bisection did not reach width {tol} in {max_iter} steps")
