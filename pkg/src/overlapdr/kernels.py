"""Backend selection for the fitting kernels.

The compiled extension is used when importable; set ``OVERLAPDR_BACKEND=python``
to force the NumPy fallback (``=compiled`` makes a missing extension an error).
"""
from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import (  # noqa: F401
    STATUS_CONVERGED,
    STATUS_MAX_ITER,
    STATUS_SEPARATION,
    STATUS_SINGULAR,
)

_choice = os.environ.get("OVERLAPDR_BACKEND", "auto").lower()

_compiled = None
if _choice != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _choice == "compiled":
            raise

if _compiled is not None:
    BACKEND = "compiled"
    logistic_irls = _compiled.logistic_irls
    ols_qr = _compiled.ols_qr
else:
    BACKEND = "python"
    logistic_irls = _pykernels.logistic_irls
    ols_qr = _pykernels.ols_qr


def compiled_available() -> bool:
    return _compiled is not None


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"compiled"``."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels were not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
