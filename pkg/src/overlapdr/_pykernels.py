"""NumPy implementation of the fitting kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled kernels are tested against. Both modules implement
the same algorithms with the same stopping rules.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_SEPARATION = 2
STATUS_SINGULAR = 3

RIDGE = 1e-10
RANK_TOL = 1e-10


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _deviance(eta, z):
    # -2 * loglik, written with log1p(exp(-|eta|)) to stay finite
    soft = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
    return 2.0 * float(np.sum(soft - z * eta))


def _cholesky_solve(h, g):
    try:
        c = np.linalg.cholesky(h)
    except np.linalg.LinAlgError:
        return None
    t = solve_triangular(c, g, lower=True)
    return solve_triangular(c.T, t, lower=False)


def logistic_irls(X, z, max_iter=100, coef_tol=1e-8, dev_tol=1e-10, sep_bound=30.0):
    """Maximum-likelihood logistic regression by Newton/IRLS.

    Returns ``(coef, e_hat, n_iter, status)``. ``status`` is one of the
    ``STATUS_*`` codes; anything other than ``STATUS_CONVERGED`` means the
    coefficients should be treated as unreliable.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    n, p = X.shape
    coef = np.zeros(p)
    eta = np.zeros(n)
    e = np.full(n, 0.5)
    dev = _deviance(eta, z)
    status = STATUS_MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        w = e * (1.0 - e)
        g = X.T @ (z - e)
        h = X.T @ (X * w[:, None])
        step = _cholesky_solve(h, g)
        if step is None:
            h[np.diag_indices(p)] += RIDGE
            step = _cholesky_solve(h, g)
            if step is None:
                status = STATUS_SINGULAR
                break
        coef = coef + step
        eta = X @ coef
        e = _sigmoid(eta)
        dev_new = _deviance(eta, z)
        if np.max(np.abs(coef)) > sep_bound:
            status = STATUS_SEPARATION
            break
        if (np.max(np.abs(step)) < coef_tol
                or abs(dev_new - dev) / (abs(dev_new) + 0.1) < dev_tol):
            status = STATUS_CONVERGED
            break
        dev = dev_new
    return coef, e, it, status


def ols_qr(X, y):
    """Least squares via Householder QR.

    Returns ``(coef, bad_col)`` where ``bad_col`` is -1 for a full-rank
    design, else the index of the first column found (numerically) in the
    span of the columns before it. ``coef`` is undefined in that case.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n < p:
        return np.full(p, np.nan), min(n, p - 1)
    colnorm = np.sqrt(np.sum(X * X, axis=0))
    q, r = np.linalg.qr(X, mode="reduced")
    diag = np.abs(np.diag(r))
    bad = np.nonzero((diag <= RANK_TOL * colnorm) | (colnorm == 0.0))[0]
    if bad.size:
        return np.full(p, np.nan), int(bad[0])
    coef = solve_triangular(r, q.T @ y, lower=False)
    return coef, -1
