#!/usr/bin/env python3
"""Compare the compiled GARCH kernels against the pure-Python twins.

Times the variance recursion and the negative log-likelihood at several
series lengths and orders, then a full GARCH(1,1) fit through each
backend.  Run from the repository root:

    python3 benchmarks/bench_garch_kernel.py
"""

import time

import numpy as np

from volcast import garch
from volcast._kernels import BACKEND, garch_py
from volcast._kernels import neg_loglik as active_neg_loglik
from volcast._kernels import variance_recursion as active_recursion


def best_of(fn, repeats=5):
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return min(timings)


def main() -> None:
    if BACKEND != "cython":
        print(
            f"active backend is {BACKEND!r}; build the extension (pip install -e .)\n"
            "to compare against the pure-Python kernels."
        )
    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    print(f"{'case':<26} {'python':>10} {'active':>10} {'speedup':>9}")
    for n in (1_000, 5_000, 20_000):
        for order, alpha, beta in (
            ("(1,1)", (0.1,), (0.8,)),
            ("(2,2)", (0.05, 0.05), (0.4, 0.4)),
        ):
            resid2 = rng.standard_normal(n) ** 2
            args = (
                resid2,
                0.1,
                np.asarray(alpha, dtype=np.float64),
                np.asarray(beta, dtype=np.float64),
                float(np.var(resid2)),
            )
            t_py = best_of(lambda: garch_py.variance_recursion(*args))
            t_ac = best_of(lambda: active_recursion(*args))
            print(
                f"recursion n={n:<6} {order:<7} {t_py*1e3:>8.2f}ms {t_ac*1e3:>8.2f}ms"
                f" {t_py / t_ac:>8.1f}x"
            )
            t_py = best_of(lambda: garch_py.neg_loglik(*args))
            t_ac = best_of(lambda: active_neg_loglik(*args))
            print(
                f"loglik    n={n:<6} {order:<7} {t_py*1e3:>8.2f}ms {t_ac*1e3:>8.2f}ms"
                f" {t_py / t_ac:>8.1f}x"
            )

    params = garch.GarchParams(omega=0.1, alpha=(0.1,), beta=(0.8,))
    returns = garch.simulate(params, n=5_000, seed=1)
    start = time.perf_counter()
    fitted = garch.fit(returns, p=1, q=1, restarts=1)
    elapsed = time.perf_counter() - start
    print(
        f"\nfull fit, n=5000, backend={BACKEND}: {elapsed:.2f}s "
        f"(loglik {fitted.loglik:.2f}, converged {fitted.converged})"
    )
    print(
        "rerun with VOLCAST_PURE_PYTHON=1 to time the fit through the"
        " pure-Python kernels."
    )


if __name__ == "__main__":
    main()
