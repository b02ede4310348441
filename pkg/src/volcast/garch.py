"""GARCH(p,q) estimation by Gaussian quasi-maximum likelihood.

Conventions: q counts ARCH terms (lagged squared shocks), p counts GARCH
terms (lagged conditional variances).  Estimation runs on returns
multiplied by 100 for numerical conditioning; fitted parameters are
exposed back in input units while the reported log-likelihood (and hence
AIC) refers to the scaled data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from volcast import _kernels
from volcast.errors import DataError, NoConvergedFit, NumericError
from volcast.timeseries import ReturnSeries

__all__ = [
    "GarchParams",
    "GarchFit",
    "AdfResult",
    "conditional_variance",
    "neg_loglik",
    "fit",
    "select_order",
    "forecast_one_step",
    "one_step_variance",
    "simulate",
    "adf_test",
    "fit_to_text",
    "fit_from_text",
]

INTERNAL_SCALE = 100.0

ADF_CRITICAL = {"1%": -3.43, "5%": -2.86, "10%": -2.57}


@dataclass(frozen=True)
class GarchParams:
    """GARCH coefficient set; alpha has length q, beta length p."""

    omega: float
    alpha: np.ndarray
    beta: np.ndarray
    mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.atleast_1d(np.asarray(self.alpha, dtype=np.float64)))
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=np.float64)))
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "mean", float(self.mean))
        if self.omega <= 0:
            raise NumericError("omega must be positive")
        if np.any(self.alpha < 0) or np.any(self.beta < 0):
            raise NumericError("alpha and beta must be non-negative")

    @property
    def q(self) -> int:
        return len(self.alpha)

    @property
    def p(self) -> int:
        return len(self.beta)

    @property
    def persistence(self) -> float:
        return float(self.alpha.sum() + self.beta.sum())

    @property
    def stationary(self) -> bool:
        return self.persistence < 1.0


@dataclass(frozen=True)
class GarchFit:
    """Estimated model. ``loglik`` is the maximized Gaussian log-likelihood
    of the x100-scaled returns; ``params`` are in input units."""

    params: GarchParams
    loglik: float
    aic: float
    k: int
    converged: bool
    order: tuple  # (p, q)
    scale: float = INTERNAL_SCALE
    n_obs: int = 0

    def __post_init__(self):
        expected_k = 2 + self.params.q + self.params.p
        if self.k != expected_k:
            raise NumericError(f"k={self.k} but model has {expected_k} free parameters")
        if self.aic != 2 * self.k - 2 * self.loglik:
            raise NumericError("aic does not equal 2k - 2 loglik")


def _residuals(params: GarchParams, returns: ReturnSeries) -> np.ndarray:
    return np.ascontiguousarray(returns.values - params.mean)


def conditional_variance(
    params: GarchParams, returns: ReturnSeries, presample: float | None = None
) -> np.ndarray:
    """In-sample sigma^2 path, one value per return.

    Pre-sample lags of both eps^2 and sigma^2 are set to ``presample``,
    defaulting to the sample variance of the residuals.
    """
    resid = _residuals(params, returns)
    if len(resid) <= max(params.p, params.q):
        raise DataError("series shorter than the GARCH order")
    if presample is None:
        presample = float(np.var(resid))
    var = np.asarray(
        _kernels.variance_recursion(
            resid**2, params.omega, params.alpha, params.beta, presample
        )
    )
    if not np.all(np.isfinite(var)) or np.any(var <= 0):
        raise NumericError("variance recursion produced non-positive values")
    return var


def neg_loglik(
    params: GarchParams, returns: ReturnSeries, presample: float | None = None
) -> float:
    """Gaussian negative log-likelihood under the conditional-variance path.

    Non-finite or non-positive variances yield +inf so optimizers treat the
    parameter point as infeasible.
    """
    resid = _residuals(params, returns)
    if presample is None:
        presample = float(np.var(resid))
    return float(
        _kernels.neg_loglik(resid**2, params.omega, params.alpha, params.beta, presample)
    )


def one_step_variance(params: GarchParams, eps2_hist, var_hist) -> float:
    """omega + sum(alpha_i eps2[t-i]) + sum(beta_j var[t-j]) with histories
    ordered oldest to newest."""
    eps2 = np.asarray(eps2_hist, dtype=np.float64)
    var = np.asarray(var_hist, dtype=np.float64)
    if len(eps2) < params.q or len(var) < params.p:
        raise DataError("history shorter than the GARCH order")
    out = params.omega
    for i in range(params.q):
        out += params.alpha[i] * eps2[-1 - i]
    for j in range(params.p):
        out += params.beta[j] * var[-1 - j]
    return float(out)


def _softplus(x: np.ndarray) -> np.ndarray:
    # stable ln(1 + e^x)
    return np.logaddexp(0.0, x)


def _softplus_inv(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def _unpack(theta: np.ndarray, p: int, q: int) -> tuple:
    mean = theta[0]
    # clamp both sides: the upper bound stops overflow, the lower bound
    # stops exp() underflowing to an exact 0.0 that would break the
    # positivity guarantee of this parameterization
    omega = math.exp(min(max(theta[1], -690.0), 50.0))
    alpha = _softplus(theta[2 : 2 + q])
    beta = _softplus(theta[2 + q : 2 + q + p])
    return mean, omega, alpha, beta


def _params_to_theta(params: GarchParams, p: int, q: int) -> np.ndarray:
    """Unconstrained coordinates for a (scaled-unit) parameter point, padding
    any lags the point lacks with near-zero coefficients."""
    alpha = np.full(q, 1e-8)
    na = min(params.q, q)
    alpha[:na] = np.maximum(params.alpha[:na], 1e-10)
    beta = np.full(p, 1e-8)
    nb = min(params.p, p)
    beta[:nb] = np.maximum(params.beta[:nb], 1e-10)
    return np.concatenate(
        [
            [params.mean, math.log(params.omega)],
            _softplus_inv(alpha) if q else [],
            _softplus_inv(beta) if p else [],
        ]
    )


def fit(
    returns: ReturnSeries,
    p: int,
    q: int,
    seed: int = 0,
    restarts: int = 5,
    warm_starts: tuple = (),
) -> GarchFit:
    """Estimate GARCH(p,q) by Nelder-Mead on an unconstrained parameterization.

    omega enters as exp(a) and each alpha/beta as softplus(b), so positivity
    holds by construction; the constant mean is estimated jointly.  The best
    of ``restarts`` seeded starting points wins, and ``converged`` reports
    whether that run met the 1e-8 simplex tolerance within 2000 iterations.
    ``warm_starts`` adds extra starting points (GarchParams in input units,
    lower-order ones padded with near-zero lags), which is how the order
    search reuses neighbouring solutions.
    """
    if not (0 <= p <= 8 and 0 <= q <= 8 and p + q >= 1):
        raise DataError(f"order ({p},{q}) out of range")
    if len(returns) < 50:
        raise DataError("need at least 50 observations")
    x = np.ascontiguousarray(returns.values * INTERNAL_SCALE)
    sample_var = float(np.var(x - x.mean()))
    if sample_var == 0.0:
        raise NumericError("constant returns; variance model is degenerate")

    def objective(theta):
        mean, omega, alpha, beta = _unpack(theta, p, q)
        return float(_kernels.neg_loglik_mean(x, mean, omega, alpha, beta))

    rng = np.random.default_rng(seed)
    starts = []
    if restarts > 0:
        # default start: mild ARCH, persistent GARCH, intercept sized to the data
        starts.append(
            np.concatenate(
                [
                    [x.mean(), math.log(0.1 * sample_var)],
                    _softplus_inv(np.full(q, 0.05)) if q else [],
                    _softplus_inv(np.full(p, 0.8 / p)) if p else [],
                ]
            )
        )
    if restarts > 1:
        # near-iid start; without it, ARCH-free data strands the optimizer
        # on the flat ridge omega/(1 - beta) = const at a high beta
        starts.append(
            np.concatenate(
                [
                    [x.mean(), math.log(0.95 * sample_var)],
                    _softplus_inv(np.full(q, 0.02)) if q else [],
                    _softplus_inv(np.full(p, 0.02)) if p else [],
                ]
            )
        )
    for _ in range(max(0, restarts - 2)):
        starts.append(
            np.concatenate(
                [
                    [x.mean() + rng.normal(0, 0.1)],
                    [math.log(sample_var * rng.uniform(0.02, 0.5))],
                    _softplus_inv(rng.uniform(0.01, 0.25 / max(q, 1), size=q)) if q else [],
                    _softplus_inv(rng.uniform(0.3, 0.9, size=p) / p) if p else [],
                ]
            )
        )
    for params in warm_starts:
        scaled_params = GarchParams(
            omega=params.omega * INTERNAL_SCALE**2,
            alpha=params.alpha,
            beta=params.beta,
            mean=params.mean * INTERNAL_SCALE,
        )
        starts.append(_params_to_theta(scaled_params, p, q))
    if not starts:
        raise DataError("restarts=0 requires at least one warm start")

    n_cold = len(starts) - len(warm_starts)
    results = []
    for idx, theta0 in enumerate(starts):
        options = {"xatol": 1e-8, "fatol": 1e-5, "maxiter": 2000, "maxfev": 3200}
        if idx >= n_cold:
            # warm runs begin near an optimum; a narrowed simplex skips most
            # of the initial contraction phase
            spread = np.maximum(0.01 * np.abs(theta0), 1e-3)
            options["initial_simplex"] = np.vstack(
                [theta0, theta0 + np.diag(spread)]
            )
        res = minimize(objective, theta0, method="Nelder-Mead", options=options)
        if math.isfinite(res.fun):
            results.append(res)
    if not results:
        raise NumericError(f"all starting points diverged for order ({p},{q})")
    floor = min(r.fun for r in results)
    # likelihood near-ties arise on the unidentified ridge of ARCH-free
    # data; prefer the least persistent of the tied optima
    tol = 1e-6 * max(1.0, abs(floor))
    tied = [r for r in results if r.fun <= floor + tol]
    best = min(tied, key=lambda r: float(np.sum(_softplus(r.x[2:]))))

    mean_s, omega_s, alpha, beta = _unpack(best.x, p, q)
    loglik = -float(best.fun)
    k = 2 + q + p
    params = GarchParams(
        omega=omega_s / INTERNAL_SCALE**2,
        alpha=alpha,
        beta=beta,
        mean=mean_s / INTERNAL_SCALE,
    )
    return GarchFit(
        params=params,
        loglik=loglik,
        aic=2 * k - 2 * loglik,
        k=k,
        converged=bool(best.success),
        order=(p, q),
        scale=INTERNAL_SCALE,
        n_obs=len(returns),
    )


def select_order(
    returns: ReturnSeries,
    p_max: int = 4,
    q_max: int = 4,
    seed: int = 0,
    restarts: int = 2,
) -> GarchFit:
    """Grid search over p in [0, p_max], q in [0, q_max] minus (0,0).

    Returns the converged candidate with the lowest AIC; ties break to the
    smaller k, then the smaller (p, q).  Candidates are visited in
    increasing parameter count and warm-started from the (p-1,q) and
    (p,q-1) solutions; those reused optima keep the per-candidate restart
    count below fit()'s default without giving up likelihood quality.
    """
    if p_max < 0 or q_max < 0 or (p_max == 0 and q_max == 0):
        raise DataError("order bounds must allow at least one model")
    grid = [
        (p, q)
        for p in range(p_max + 1)
        for q in range(q_max + 1)
        if p + q >= 1
    ]
    grid.sort(key=lambda pq: (pq[0] + pq[1], pq))
    fits: dict = {}
    for p, q in grid:
        neighbours = [fits[n] for n in ((p - 1, q), (p, q - 1)) if n in fits]
        # one warm start per candidate: the lower-AIC neighbour's optimum.
        # Low-order models keep a cold start too; they are cheap, and their
        # maxima anchor every warm start upstream of them.
        warm = tuple(
            f.params for f in sorted(neighbours, key=lambda f: f.aic)[:1]
        )
        cold = restarts if not warm else (1 if p + q <= 3 else 0)
        try:
            fits[(p, q)] = fit(
                returns, p, q, seed=seed, restarts=cold, warm_starts=warm
            )
        except NumericError:
            continue
    converged = [c for c in fits.values() if c.converged]
    if not converged:
        raise NoConvergedFit("no (p,q) candidate met the convergence tolerance")
    return min(converged, key=lambda f: (f.aic, f.k, f.order))


def forecast_one_step(fitted: GarchFit, returns: ReturnSeries) -> float:
    """Volatility forecast sigma_{t+1} in raw-return units.

    Runs the in-sample recursion on the scaled history and projects one
    step past its end.
    """
    scale = fitted.scale
    scaled = ReturnSeries(returns.dates, returns.values * scale, returns.kind)
    params = GarchParams(
        omega=fitted.params.omega * scale**2,
        alpha=fitted.params.alpha,
        beta=fitted.params.beta,
        mean=fitted.params.mean * scale,
    )
    resid = _residuals(params, scaled)
    var = conditional_variance(params, scaled)
    presample = float(np.var(resid))
    # presample padding only matters when the order exceeds the history
    eps2_hist = np.concatenate([np.full(max(params.q, 1), presample), resid**2])
    var_hist = np.concatenate([np.full(max(params.p, 1), presample), var])
    next_var = one_step_variance(params, eps2_hist, var_hist)
    if next_var <= 0 or not math.isfinite(next_var):
        raise NumericError("non-positive forecast variance")
    return math.sqrt(next_var) / scale


def simulate(params: GarchParams, n: int, seed: int) -> ReturnSeries:
    """Draw a GARCH path with standard-normal innovations.

    Discards a 500-step burn-in started at the unconditional variance;
    deterministic for a given seed.
    """
    if n < 1:
        raise DataError("n must be at least 1")
    if not params.stationary:
        raise NumericError("simulation requires sum(alpha) + sum(beta) < 1")
    rng = np.random.default_rng(seed)
    burn = 500
    z = rng.standard_normal(n + burn)
    p, q = params.p, params.q
    uncond = params.omega / (1.0 - params.persistence)
    eps2_hist = [uncond] * max(q, 1)
    var_hist = [uncond] * max(p, 1)
    out = np.empty(n + burn)
    for t in range(n + burn):
        var = params.omega
        for i in range(q):
            var += params.alpha[i] * eps2_hist[-1 - i]
        for j in range(p):
            var += params.beta[j] * var_hist[-1 - j]
        eps = math.sqrt(var) * z[t]
        out[t] = params.mean + eps
        eps2_hist.append(eps * eps)
        var_hist.append(var)
        if len(eps2_hist) > q + 1:
            eps2_hist.pop(0)
        if len(var_hist) > p + 1:
            var_hist.pop(0)
    dates = np.datetime64("2000-01-03") + np.arange(n)
    return ReturnSeries(dates, out[burn:], "log")


@dataclass(frozen=True)
class AdfResult:
    """Unit-root test outcome against the constant-only critical values."""

    statistic: float
    lags: int
    n_obs: int
    critical_values: dict = field(default_factory=lambda: dict(ADF_CRITICAL))

    def rejects(self, level: str) -> bool:
        return self.statistic < self.critical_values[level]


def adf_test(x, lags: int | None = None) -> AdfResult:
    """Augmented Dickey-Fuller regression, constant-only specification.

    Regresses dx_t on a constant, x_{t-1}, and ``lags`` lagged differences;
    the lag order defaults to the Schwert rule floor(12 (n/100)^0.25).  The
    statistic is the t-ratio of the x_{t-1} coefficient.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 25:
        raise DataError("need at least 25 observations")
    if lags is None:
        lags = int(math.floor(12.0 * (n / 100.0) ** 0.25))
        lags = min(lags, n - 10)  # keep a usable regression sample
    elif lags < 0 or lags > n - 10:
        raise DataError(f"lag order {lags} unusable for {n} observations")
    dx = np.diff(x)
    rows = len(dx) - lags
    cols = [np.ones(rows), x[lags : lags + rows]]
    for i in range(1, lags + 1):
        cols.append(dx[lags - i : lags - i + rows])
    design = np.column_stack(cols)
    y = dx[lags:]
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise NumericError("singular ADF regression")
    resid = y - design @ coef
    dof = rows - design.shape[1]
    if dof <= 0:
        raise DataError("too few observations for the chosen lag order")
    sigma2 = float(resid @ resid) / dof
    xtx_inv = np.linalg.inv(design.T @ design)
    se = math.sqrt(sigma2 * xtx_inv[1, 1])
    return AdfResult(statistic=float(coef[1] / se), lags=lags, n_obs=rows)


def fit_to_text(fitted: GarchFit) -> str:
    """Flat key = value record of a fit, one field per line."""
    lines = [
        f"p = {fitted.order[0]}",
        f"q = {fitted.order[1]}",
        f"mean = {fitted.params.mean!r}",
        f"omega = {fitted.params.omega!r}",
    ]
    for i, a in enumerate(fitted.params.alpha, start=1):
        lines.append(f"alpha_{i} = {float(a)!r}")
    for j, b in enumerate(fitted.params.beta, start=1):
        lines.append(f"beta_{j} = {float(b)!r}")
    lines += [
        f"loglik = {float(fitted.loglik)!r}",
        f"aic = {float(fitted.aic)!r}",
        f"k = {fitted.k}",
        f"converged = {fitted.converged}",
        f"scale = {float(fitted.scale)!r}",
        f"n_obs = {fitted.n_obs}",
    ]
    return "\n".join(lines) + "\n"


def fit_from_text(text: str) -> GarchFit:
    """Inverse of fit_to_text."""
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        p = int(fields["p"])
        q = int(fields["q"])
        alpha = np.array([float(fields[f"alpha_{i}"]) for i in range(1, q + 1)])
        beta = np.array([float(fields[f"beta_{j}"]) for j in range(1, p + 1)])
        params = GarchParams(
            omega=float(fields["omega"]),
            alpha=alpha if q else np.zeros(0),
            beta=beta if p else np.zeros(0),
            mean=float(fields["mean"]),
        )
        return GarchFit(
            params=params,
            loglik=float(fields["loglik"]),
            aic=float(fields["aic"]),
            k=int(fields["k"]),
            converged=fields["converged"] == "True",
            order=(p, q),
            scale=float(fields["scale"]),
            n_obs=int(fields.get("n_obs", 0)),
        )
    except KeyError as exc:
        raise DataError(f"fit record missing field {exc}") from exc
