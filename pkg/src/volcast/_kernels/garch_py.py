"""Pure-Python twin of the compiled GARCH kernels.

Semantics match ``_garch_cy`` operation for operation so the two backends
are interchangeable; this one is selected when the extension is not built
or when ``VOLCAST_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def variance_recursion(resid2, omega, alpha, beta, seed):
    resid2 = np.asarray(resid2, dtype=np.float64)
    alpha = [float(a) for a in alpha]
    beta = [float(b) for b in beta]
    seed = float(seed)
    n = resid2.shape[0]
    r2 = resid2.tolist()
    sigma2 = [0.0] * n
    for t in range(n):
        acc = float(omega)
        for i, a in enumerate(alpha):
            k = t - 1 - i
            acc += a * (r2[k] if k >= 0 else seed)
        for j, b in enumerate(beta):
            k = t - 1 - j
            acc += b * (sigma2[k] if k >= 0 else seed)
        sigma2[t] = acc
    return np.asarray(sigma2, dtype=np.float64)


def neg_loglik(resid2, omega, alpha, beta, seed):
    resid2 = np.asarray(resid2, dtype=np.float64)
    alpha = [float(a) for a in alpha]
    beta = [float(b) for b in beta]
    seed = float(seed)
    omega = float(omega)
    r2 = resid2.tolist()
    p = len(beta)
    hist = p if p > 0 else 1
    prev = [seed] * hist
    total = 0.0
    for t in range(len(r2)):
        acc = omega
        for i, a in enumerate(alpha):
            k = t - 1 - i
            acc += a * (r2[k] if k >= 0 else seed)
        for j, b in enumerate(beta):
            k = t - 1 - j
            acc += b * (prev[k % hist] if k >= 0 else seed)
        if not math.isfinite(acc) or acc <= 0.0:
            return math.inf
        total += 0.5 * (LOG_2PI + math.log(acc) + r2[t] / acc)
        prev[t % hist] = acc
    return total


def neg_loglik_mean(x, mean, omega, alpha, beta):
    """neg_loglik with residual formation fused in; the pre-sample seed is
    the biased variance of x - mean, accumulated the same way as the
    compiled version (running sum and sum of squares)."""
    x = np.asarray(x, dtype=np.float64)
    mean = float(mean)
    n = x.shape[0]
    xs = x.tolist()
    resid2 = [0.0] * n
    s = 0.0
    ss = 0.0
    for t in range(n):
        r = xs[t] - mean
        resid2[t] = r * r
        s += r
        ss += r * r
    seed = ss / n - (s / n) * (s / n)
    if not math.isfinite(seed) or seed <= 0.0:
        return math.inf
    return neg_loglik(resid2, omega, alpha, beta, seed)
