# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled GARCH recursion kernels.

These are the hot inner loops of maximum-likelihood estimation: the
variance recursion cannot be vectorized (sigma2[t] depends on sigma2[t-1])
and the likelihood is evaluated thousands of times per fit by the simplex
optimizer.  A numpy twin with identical semantics lives in ``garch_py``.
"""

from libc.math cimport log, isfinite

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453


def variance_recursion(double[::1] resid2, double omega, double[::1] alpha,
                       double[::1] beta, double seed):
    """sigma2[t] = omega + sum_i alpha[i]*resid2[t-1-i] + sum_j beta[j]*sigma2[t-1-j].

    Pre-sample values of both resid2 and sigma2 are replaced by ``seed``.
    Returns an array of the same length as resid2.
    """
    cdef Py_ssize_t n = resid2.shape[0]
    cdef Py_ssize_t q = alpha.shape[0]
    cdef Py_ssize_t p = beta.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] sigma2 = out
    cdef Py_ssize_t t, i, j, k
    cdef double acc

    for t in range(n):
        acc = omega
        for i in range(q):
            k = t - 1 - i
            acc += alpha[i] * (resid2[k] if k >= 0 else seed)
        for j in range(p):
            k = t - 1 - j
            acc += beta[j] * (sigma2[k] if k >= 0 else seed)
        sigma2[t] = acc
    return out


def neg_loglik(double[::1] resid2, double omega, double[::1] alpha,
               double[::1] beta, double seed):
    """Gaussian negative log-likelihood of the residuals under the recursion.

    Returns +inf as soon as any conditional variance is non-positive or
    non-finite, which the optimizer treats as an infeasible point.
    """
    cdef Py_ssize_t n = resid2.shape[0]
    cdef Py_ssize_t q = alpha.shape[0]
    cdef Py_ssize_t p = beta.shape[0]
    cdef Py_ssize_t t, i, j, k
    cdef double acc, total = 0.0
    # Ring buffer of the last max(p, 1) variances; p == 0 still needs one slot.
    cdef Py_ssize_t hist = p if p > 0 else 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(hist, dtype=np.float64)
    cdef double[::1] prev = buf

    for j in range(hist):
        prev[j] = seed

    for t in range(n):
        acc = omega
        for i in range(q):
            k = t - 1 - i
            acc += alpha[i] * (resid2[k] if k >= 0 else seed)
        for j in range(p):
            k = t - 1 - j
            acc += beta[j] * (prev[k % hist] if k >= 0 else seed)
        if not isfinite(acc) or acc <= 0.0:
            return np.inf
        total += 0.5 * (LOG_2PI + log(acc) + resid2[t] / acc)
        prev[t % hist] = acc
    return total


def neg_loglik_mean(double[::1] x, double mean, double omega, double[::1] alpha,
                    double[::1] beta):
    """neg_loglik with residual formation fused in: resid = x - mean and the
    pre-sample seed (the biased residual variance) are computed here rather
    than by the caller, saving array temporaries inside the optimizer loop.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t q = alpha.shape[0]
    cdef Py_ssize_t p = beta.shape[0]
    cdef Py_ssize_t t, i, j, k
    cdef double acc, r, total = 0.0
    cdef double s = 0.0, ss = 0.0, seed
    cdef Py_ssize_t hist = p if p > 0 else 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(hist, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r2buf = np.empty(n, dtype=np.float64)
    cdef double[::1] prev = buf
    cdef double[::1] resid2 = r2buf

    for t in range(n):
        r = x[t] - mean
        resid2[t] = r * r
        s += r
        ss += r * r
    seed = ss / n - (s / n) * (s / n)
    if not isfinite(seed) or seed <= 0.0:
        return np.inf
    for j in range(hist):
        prev[j] = seed

    for t in range(n):
        acc = omega
        for i in range(q):
            k = t - 1 - i
            acc += alpha[i] * (resid2[k] if k >= 0 else seed)
        for j in range(p):
            k = t - 1 - j
            acc += beta[j] * (prev[k % hist] if k >= 0 else seed)
        if not isfinite(acc) or acc <= 0.0:
            return np.inf
        total += 0.5 * (LOG_2PI + log(acc) + resid2[t] / acc)
        prev[t % hist] = acc
    return total
