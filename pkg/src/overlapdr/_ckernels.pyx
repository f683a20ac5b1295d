# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fitting kernels (logistic IRLS, Householder least squares).

Mirrors ``_pykernels`` exactly in algorithm and stopping rules; results agree
with it to rounding error, not bit-for-bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, sqrt, copysign, isfinite

cnp.import_array()

cdef enum:
    STATUS_CONVERGED = 0
    STATUS_MAX_ITER = 1
    STATUS_SEPARATION = 2
    STATUS_SINGULAR = 3

cdef double RIDGE = 1e-10
cdef double RANK_TOL = 1e-10


cdef inline double _sigmoid(double eta) noexcept nogil:
    cdef double ex
    if eta >= 0:
        return 1.0 / (1.0 + exp(-eta))
    ex = exp(eta)
    return ex / (1.0 + ex)


cdef double _deviance(const double[::1] eta, const double[::1] z) noexcept nogil:
    cdef Py_ssize_t i, n = eta.shape[0]
    cdef double s = 0.0, a
    for i in range(n):
        a = eta[i]
        s += (a if a > 0 else 0.0) + log1p(exp(-fabs(a))) - z[i] * a
    return 2.0 * s


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    # four independent accumulators in a fixed order: fast and deterministic
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


cdef int _cholesky_solve(double[:, ::1] h, double[::1] g, double[:, ::1] L,
                         double[::1] out) noexcept nogil:
    """Solve h @ out = g through a lower Cholesky factor; 0 on failure."""
    cdef Py_ssize_t p = h.shape[0], i, j, k
    cdef double s
    for j in range(p):
        s = h[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0) or not isfinite(s):
            return 0
        L[j, j] = sqrt(s)
        for i in range(j + 1, p):
            s = h[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    for i in range(p):
        s = g[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(p - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, p):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return 1


def logistic_irls(X, z, int max_iter=100, double coef_tol=1e-8,
                  double dev_tol=1e-10, double sep_bound=30.0):
    """Maximum-likelihood logistic regression by Newton/IRLS.

    Returns ``(coef, e_hat, n_iter, status)``.
    """
    Xa = np.asarray(X, dtype=np.float64)
    cdef const double[:, ::1] XT = np.ascontiguousarray(Xa.T)
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t p = XT.shape[0], n = XT.shape[1]
    cdef Py_ssize_t i, j, k
    coef_a = np.zeros(p)
    e_a = np.full(n, 0.5)
    cdef double[::1] coef = coef_a
    cdef double[::1] e = e_a
    cdef double[::1] eta = np.zeros(n)
    cdef double[::1] w = np.empty(n)
    cdef double[::1] r = np.empty(n)
    cdef double[::1] tmp = np.empty(n)
    cdef double[::1] g = np.empty(p)
    cdef double[::1] step = np.empty(p)
    cdef double[:, ::1] h = np.empty((p, p))
    cdef double[:, ::1] L = np.zeros((p, p))
    cdef double dev, dev_new, c, maxstep, maxcoef
    cdef int status = STATUS_MAX_ITER
    cdef int it = 0

    with nogil:
        dev = _deviance(eta, zv)
        while it < max_iter:
            it += 1
            for i in range(n):
                w[i] = e[i] * (1.0 - e[i])
                r[i] = zv[i] - e[i]
            for j in range(p):
                g[j] = _dot(&XT[j, 0], &r[0], n)
                for i in range(n):
                    tmp[i] = XT[j, i] * w[i]
                for k in range(j + 1):
                    h[j, k] = _dot(&tmp[0], &XT[k, 0], n)
                    h[k, j] = h[j, k]
            if not _cholesky_solve(h, g, L, step):
                for j in range(p):
                    h[j, j] += RIDGE
                if not _cholesky_solve(h, g, L, step):
                    status = STATUS_SINGULAR
                    break
            maxstep = 0.0
            maxcoef = 0.0
            for j in range(p):
                coef[j] += step[j]
                if fabs(step[j]) > maxstep:
                    maxstep = fabs(step[j])
                if fabs(coef[j]) > maxcoef:
                    maxcoef = fabs(coef[j])
            for i in range(n):
                eta[i] = 0.0
            for j in range(p):
                c = coef[j]
                for i in range(n):
                    eta[i] += XT[j, i] * c
            for i in range(n):
                e[i] = _sigmoid(eta[i])
            dev_new = _deviance(eta, zv)
            if maxcoef > sep_bound:
                status = STATUS_SEPARATION
                break
            if maxstep < coef_tol or fabs(dev_new - dev) / (fabs(dev_new) + 0.1) < dev_tol:
                status = STATUS_CONVERGED
                break
            dev = dev_new
    return coef_a, e_a, it, status


def ols_qr(X, y):
    """Least squares via Householder QR; returns ``(coef, bad_col)``."""
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], p = Xv.shape[1]
    if n < p:
        return np.full(p, np.nan), min(n, p - 1)
    # column-major working copy: row j of A is design column j
    cdef double[:, ::1] A = np.ascontiguousarray(np.asarray(Xv).T)
    cdef double[::1] b = np.array(y, dtype=np.float64, copy=True)
    cdef double[::1] colnorm = np.empty(p)
    cdef double[::1] rdiag = np.empty(p)
    coef_a = np.empty(p)
    cdef double[::1] coef = coef_a
    cdef Py_ssize_t i, j, k
    cdef double s, nrm, alpha, vnorm2, f
    cdef Py_ssize_t bad = -1

    with nogil:
        for j in range(p):
            colnorm[j] = sqrt(_dot(&A[j, 0], &A[j, 0], n))
        for k in range(p):
            nrm = sqrt(_dot(&A[k, k], &A[k, k], n - k))
            if colnorm[k] == 0.0 or nrm <= RANK_TOL * colnorm[k]:
                bad = k
                break
            alpha = -copysign(nrm, A[k, k])
            A[k, k] -= alpha
            vnorm2 = _dot(&A[k, k], &A[k, k], n - k)
            rdiag[k] = alpha
            for j in range(k + 1, p):
                f = 2.0 * _dot(&A[k, k], &A[j, k], n - k) / vnorm2
                for i in range(k, n):
                    A[j, i] -= f * A[k, i]
            f = 2.0 * _dot(&A[k, k], &b[k], n - k) / vnorm2
            for i in range(k, n):
                b[i] -= f * A[k, i]
        if bad < 0:
            for k in range(p - 1, -1, -1):
                s = b[k]
                for j in range(k + 1, p):
                    s -= A[j, k] * coef[j]
                coef[k] = s / rdiag[k]
    if bad >= 0:
        return np.full(p, np.nan), int(bad)
    return coef_a, -1
