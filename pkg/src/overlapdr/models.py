"""Working propensity (logistic) and outcome (linear) models.

Misspecification is expressed through the design matrix: ``WRONG_FORM``
swaps X3 for X3**2 and ``OMIT_VARS`` drops X3 and X4.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels


class Form(str, Enum):
    CORRECT = "correct"
    WRONG_FORM = "wrong_form"
    OMIT_VARS = "omit_vars"


class RankDeficientError(ValueError):
    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


@dataclass(frozen=True)
class ModelSpec:
    ps_form: Form = Form.CORRECT
    outcome_form: Form = Form.CORRECT

    @property
    def name(self) -> str:
        for name, spec in MODEL_SPECS.items():
            if spec == self:
                return name
        return f"ps_{self.ps_form.value}__outcome_{self.outcome_form.value}"


MODEL_SPECS: dict[str, ModelSpec] = {
    "correct": ModelSpec(Form.CORRECT, Form.CORRECT),
    "ps_wrong": ModelSpec(Form.WRONG_FORM, Form.CORRECT),
    "outcome_wrong": ModelSpec(Form.CORRECT, Form.WRONG_FORM),
    "both_wrong": ModelSpec(Form.WRONG_FORM, Form.WRONG_FORM),
    "ps_omit": ModelSpec(Form.OMIT_VARS, Form.CORRECT),
    "outcome_omit": ModelSpec(Form.CORRECT, Form.OMIT_VARS),
    "both_omit": ModelSpec(Form.OMIT_VARS, Form.OMIT_VARS),
}


def get_spec(name: str) -> ModelSpec:
    try:
        return MODEL_SPECS[name]
    except KeyError:
        raise KeyError(f"unknown model spec {name!r}; expected one of {sorted(MODEL_SPECS)}") from None


@dataclass
class LogisticFit:
    coef: np.ndarray
    converged: bool
    n_iter: int
    e_hat: np.ndarray
    status: int = kernels.STATUS_CONVERGED

    @property
    def separated(self) -> bool:
        return self.status == kernels.STATUS_SEPARATION


@dataclass
class OutcomeFit:
    """Linear outcome fit.

    ``mode="joint"``: ``coef`` is (intercept, covariates..., treatment).
    ``mode="per_arm"``: ``coef`` is the control-arm coefficients followed by
    the treated-arm coefficients.
    """

    coef: np.ndarray
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    mode: str = "joint"
    dropped: tuple = ()


@dataclass
class FittedModels:
    ps: LogisticFit
    outcome: OutcomeFit


def build_design(x, form: Form | str = Form.CORRECT) -> np.ndarray:
    """Prepend an intercept and apply the covariate transform for ``form``.

    ``CORRECT`` works for any number of covariates; the misspecified forms
    assume the six simulation covariates.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be a 2-d array")
    form = Form(form)
    n, k = x.shape
    if form is Form.CORRECT:
        cols = [x]
    else:
        if k != 6:
            raise ValueError(f"{form.value} design needs 6 covariates, got {k}")
        if form is Form.WRONG_FORM:
            cols = [x[:, :2], x[:, 2:3] ** 2, x[:, 3:]]
        else:
            cols = [x[:, :2], x[:, 4:]]
    design = np.concatenate([np.ones((n, 1))] + cols, axis=1)
    if n < design.shape[1]:
        raise RankDeficientError(
            f"{n} rows cannot support {design.shape[1]} design columns")
    return design


def fit_logistic(design, z) -> LogisticFit:
    """Logistic MLE by IRLS.

    Stops when the largest coefficient update is below 1e-8 or the relative
    deviance change is below 1e-10, with a 100-iteration cap. Separation
    (|coef| > 30) or a cap hit yields ``converged=False`` rather than an
    exception.
    """
    z = np.asarray(z, dtype=np.float64)
    n_treated = z.sum()
    if n_treated == 0 or n_treated == z.shape[0]:
        raise ValueError("both treatment levels must be present")
    coef, e_hat, n_iter, status = kernels.logistic_irls(design, z)
    return LogisticFit(coef=coef, converged=status == kernels.STATUS_CONVERGED,
                       n_iter=int(n_iter), e_hat=e_hat, status=int(status))


def _ols(design, y, what: str) -> np.ndarray:
    coef, bad = kernels.ols_qr(design, y)
    if bad >= 0:
        raise RankDeficientError(f"{what}: design column {bad} is collinear with earlier columns",
                                 column=int(bad))
    return coef


def _ols_aliased(design, y, what: str) -> tuple[np.ndarray, list]:
    """OLS that drops aliased columns and gives them coefficient zero.

    A binary covariate that is constant within a small arm is collinear
    with the intercept; the fit then proceeds on the remaining columns, as
    R's ``lm`` does.
    """
    if y.shape[0] == 0:
        raise RankDeficientError(f"{what}: no rows", column=0)
    keep = list(range(design.shape[1]))
    dropped = []
    while True:
        coef, bad = kernels.ols_qr(design[:, keep], y)
        if bad < 0:
            break
        if len(keep) == 1:
            raise RankDeficientError(f"{what}: intercept-only design is degenerate", column=0)
        dropped.append(keep.pop(int(bad)))
    full = np.zeros(design.shape[1])
    full[keep] = coef
    return full, dropped


def fit_outcome(design, z, y_obs, mode: str = "per_arm") -> OutcomeFit:
    design = np.asarray(design, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    y_obs = np.asarray(y_obs, dtype=np.float64)
    if mode == "joint":
        coef = _ols(np.column_stack([design, z]), y_obs, "joint outcome model")
        base = design @ coef[:-1]
        return OutcomeFit(coef=coef, mu0_hat=base, mu1_hat=base + coef[-1], mode=mode)
    if mode == "per_arm":
        treated = z == 1
        b0, d0 = _ols_aliased(design[~treated], y_obs[~treated], "control-arm outcome model")
        b1, d1 = _ols_aliased(design[treated], y_obs[treated], "treated-arm outcome model")
        dropped = tuple(("control", j) for j in d0) + tuple(("treated", j) for j in d1)
        return OutcomeFit(coef=np.concatenate([b0, b1]), mu0_hat=design @ b0,
                          mu1_hat=design @ b1, mode=mode, dropped=dropped)
    raise ValueError(f"unknown outcome mode {mode!r}")


def fit_models(x, z, y_obs, spec: ModelSpec, outcome_mode: str = "per_arm") -> FittedModels:
    ps = fit_logistic(build_design(x, spec.ps_form), z)
    outcome = fit_outcome(build_design(x, spec.outcome_form), z, y_obs, mode=outcome_mode)
    return FittedModels(ps=ps, outcome=outcome)
