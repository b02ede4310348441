"""Backend selection for the GARCH recursion kernels.

Prefers the compiled extension; falls back to the numpy twin when the
extension is unavailable or ``VOLCAST_PURE_PYTHON=1`` is set.  ``BACKEND``
records which one is active.
"""

import os

if os.environ.get("VOLCAST_PURE_PYTHON") == "1":
    from volcast._kernels.garch_py import (
        neg_loglik,
        neg_loglik_mean,
        variance_recursion,
    )

    BACKEND = "python"
else:
    try:
        from volcast._kernels._garch_cy import (  # type: ignore[no-redef]
            neg_loglik,
            neg_loglik_mean,
            variance_recursion,
        )

        BACKEND = "cython"
    except ImportError:
        from volcast._kernels.garch_py import (  # type: ignore[no-redef]
            neg_loglik,
            neg_loglik_mean,
            variance_recursion,
        )

        BACKEND = "python"

__all__ = ["BACKEND", "neg_loglik", "neg_loglik_mean", "variance_recursion"]
