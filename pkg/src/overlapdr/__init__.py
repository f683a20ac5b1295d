"""Finite-sample study of doubly-robust, IPW, outcome-regression and
overlap-weighting estimators of the average treatment effect under varying
covariate overlap."""
from __future__ import annotations

__version__ = "0.1.0"

from .datagen import PRESETS, Scenario, SimDataset, make_dataset, preset  # noqa: E402,F401
from .estimators import (  # noqa: E402,F401
    EstimatorConfig,
    Method,
    estimate_all,
    estimate_dr,
    estimate_ipw_hajek,
    estimate_ipw_ht,
    estimate_om,
    estimate_ow,
)
from .kernels import BACKEND  # noqa: E402,F401
from .models import MODEL_SPECS, Form, ModelSpec  # noqa: E402,F401
