"""Local explanations for sequence models in the LIME family.

The lookback window is flattened into named tabular features ("t0
returns" is the oldest row, "t21 lagged_volatility" the newest for a
22-day lookback), each feature is discretized into training quartiles,
and the neighborhood of an instance is sampled by re-drawing bins.  A
weighted ridge surrogate fitted on the binary bin-match representation
yields signed, human-readable interval conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError

__all__ = [
    "ExplainerConfig",
    "FeatureBins",
    "Surrogate",
    "Explanation",
    "flatten",
    "unflatten",
    "discretize_stats",
    "bin_index",
    "perturb",
    "kernel",
    "fit_surrogate",
    "explain_instance",
    "format_explanation",
    "explanation_rows",
]

RIDGE_PENALTY = 1e-3


@dataclass(frozen=True)
class ExplainerConfig:
    """Knobs of the local explainer.

    ``kernel_width`` of None means the scale-free default of
    0.75 * sqrt(total flattened features), resolved at explain time.
    """

    num_samples: int = 5000
    kernel_width: float | None = None
    num_features: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_samples < 10:
            raise DataError("num_samples must be at least 10")
        if self.num_features < 1:
            raise DataError("num_features must be at least 1")
        if self.kernel_width is not None and not self.kernel_width > 0:
            raise DataError("kernel_width must be positive")


@dataclass(frozen=True)
class FeatureBins:
    """Quartile discretization of every flattened feature.

    ``boundaries`` holds the three interior quartiles per feature;
    ``minimum``/``maximum`` bound the outer bins for sampling.  Features
    with zero training variance are flagged uninformative and are never
    perturbed or fitted.
    """

    names: tuple
    boundaries: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    uninformative: np.ndarray

    def __post_init__(self) -> None:
        d = len(self.names)
        if self.boundaries.shape != (d, 3):
            raise DataError("need three quartile boundaries per feature")
        if not (len(self.minimum) == len(self.maximum) == len(self.uninformative) == d):
            raise DataError("bin arrays disagree with feature names")

    @property
    def n_features(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Surrogate:
    """Weighted ridge fit on the binary neighborhood representation."""

    intercept: float
    indices: np.ndarray
    coefficients: np.ndarray
    r_squared: float


@dataclass(frozen=True)
class Explanation:
    predicted_value: float
    local_range: tuple
    conditions: tuple
    feature_values: tuple
    r_squared: float
    intercept: float

    def __post_init__(self) -> None:
        if not all(np.isfinite(w) for _, w in self.conditions):
            raise DataError("non-finite condition weight")
        lo, hi = self.local_range
        if lo > hi:
            raise DataError("inverted local range")


def flatten(window, feature_names=None):
    """Row-major flattening of a (lookback, features) window with names.

    Offset 0 is the oldest row, so for a 22-step lookback the newest
    observations carry the prefix "t21".
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.size == 0:
        raise DataError("window must be a nonempty (lookback, features) matrix")
    lookback, width = window.shape
    if feature_names is None:
        feature_names = tuple(f"f{j}" for j in range(width))
    if len(feature_names) != width:
        raise DataError("feature names disagree with window width")
    names = tuple(
        f"t{t} {name}" for t in range(lookback) for name in feature_names
    )
    return window.reshape(-1).copy(), names


def unflatten(flat, lookback: int, n_features: int) -> np.ndarray:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != lookback * n_features:
        raise DataError("flat vector does not match the window shape")
    return flat.reshape(lookback, n_features).copy()


def discretize_stats(windows, feature_names=None) -> FeatureBins:
    """Quartile bins per flattened feature from a set of training windows.

    Accepts a (n, lookback, features) stack or an already-flattened
    (n, d) matrix.  Boundaries use linear interpolation, so values
    {1..8} produce 2.75 / 4.5 / 6.25.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 3:
        n, lookback, width = windows.shape
        flat = windows.reshape(n, lookback * width)
        if feature_names is None:
            feature_names = tuple(f"f{j}" for j in range(width))
        names = tuple(
            f"t{t} {name}" for t in range(lookback) for name in feature_names
        )
    elif windows.ndim == 2:
        flat = windows
        names = tuple(feature_names) if feature_names is not None else tuple(
            f"x{j}" for j in range(flat.shape[1])
        )
        if len(names) != flat.shape[1]:
            raise DataError("feature names disagree with matrix width")
    else:
        raise DataError("expected a window stack or a flat feature matrix")
    if flat.shape[0] < 4:
        raise DataError("need at least 4 training windows for quartiles")
    boundaries = np.percentile(flat, [25.0, 50.0, 75.0], axis=0).T
    minimum = flat.min(axis=0)
    maximum = flat.max(axis=0)
    uninformative = maximum == minimum
    return FeatureBins(
        names=names,
        boundaries=boundaries,
        minimum=minimum,
        maximum=maximum,
        uninformative=uninformative,
    )


def bin_index(values, bins: FeatureBins) -> np.ndarray:
    """Quartile bin (0..3) of each feature value; boundary ties go low."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (bins.n_features,):
        raise DataError("value vector disagrees with the bins")
    return (values[:, None] > bins.boundaries).sum(axis=1)


def perturb(x, bins: FeatureBins, n: int, seed: int = 0):
    """Neighborhood of ``x``: re-drawn quartile bins plus a match matrix.

    Per sample and feature a bin is drawn uniformly; matching draws keep
    the original value (binary 1), others are resampled uniformly within
    the drawn bin's training range (binary 0).  Row 0 is the instance
    itself.  Constant training features are never altered.
    """
    if n < 1:
        raise DataError("need at least one perturbation sample")
    x = np.asarray(x, dtype=np.float64)
    d = bins.n_features
    if x.shape != (d,):
        raise DataError("instance vector disagrees with the bins")
    rng = np.random.default_rng(seed)
    own_bin = bin_index(x, bins)
    drawn = rng.integers(0, 4, size=(n, d))
    uniform = rng.random((n, d))
    binary = (drawn == own_bin[None, :]) | bins.uninformative[None, :]
    edges = np.concatenate(
        [bins.minimum[:, None], bins.boundaries, bins.maximum[:, None]], axis=1
    )
    low = np.take_along_axis(edges[None, :, :], drawn[:, :, None], axis=2)[:, :, 0]
    high = np.take_along_axis(edges[None, :, :], drawn[:, :, None] + 1, axis=2)[:, :, 0]
    values = np.where(binary, x[None, :], low + uniform * (high - low))
    binary = binary.astype(np.float64)
    values[0] = x
    binary[0] = 1.0
    return values, binary


def kernel(distance, width: float):
    """Exponential proximity weight exp(-d^2 / width^2)."""
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance < 0):
        raise DataError("distance must be non-negative")
    if not width > 0:
        raise DataError("kernel width must be positive")
    return np.exp(-(distance**2) / width**2)


def _weighted_ridge(x, y, w, penalty):
    """Centered weighted ridge; the intercept is recovered, not penalized."""
    total = w.sum()
    x_bar = (w[:, None] * x).sum(axis=0) / total
    y_bar = float((w * y).sum() / total)
    xc = x - x_bar
    yc = y - y_bar
    gram = (xc * w[:, None]).T @ xc + penalty * np.eye(x.shape[1])
    rhs = (xc * w[:, None]).T @ yc
    try:
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"surrogate system singular despite ridge: {exc}") from exc
    if not np.all(np.isfinite(coef)):
        raise NumericError("surrogate solve produced non-finite coefficients")
    intercept = y_bar - float(x_bar @ coef)
    return intercept, coef, y_bar


def fit_surrogate(
    binary, outputs, weights, num_features: int, penalty: float = RIDGE_PENALTY
) -> Surrogate:
    """Sparse weighted linear surrogate on the binary neighborhood.

    A preliminary ridge fit over all columns ranks features by
    coefficient magnitude; the largest ``num_features`` are refitted
    alone.  Reports the weighted R-squared of the final model.
    """
    x = np.asarray(binary, dtype=np.float64)
    y = np.asarray(outputs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if not (x.shape[0] == y.shape[0] == w.shape[0]):
        raise DataError("rows, outputs and weights differ in length")
    if x.shape[0] < 2:
        raise DataError("need at least two samples to fit a surrogate")
    if not 1 <= num_features <= x.shape[1]:
        raise DataError("num_features outside the available columns")
    if np.any(w < 0) or w.sum() == 0:
        raise DataError("weights must be non-negative and not all zero")
    if np.all(y == y[0]):
        # a constant target carries no signal; short-circuit so the
        # coefficients are exact zeros rather than solver dust
        return Surrogate(
            intercept=float(y[0]),
            indices=np.arange(num_features),
            coefficients=np.zeros(num_features),
            r_squared=1.0,
        )

    _, prelim, _ = _weighted_ridge(x, y, w, penalty)
    keep = np.argsort(-np.abs(prelim), kind="stable")[:num_features]
    keep = np.sort(keep)
    intercept, coef, y_bar = _weighted_ridge(x[:, keep], y, w, penalty)
    fitted = intercept + x[:, keep] @ coef
    ss_res = float((w * (y - fitted) ** 2).sum())
    ss_tot = float((w * (y - y_bar) ** 2).sum())
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return Surrogate(
        intercept=float(intercept),
        indices=keep,
        coefficients=coef,
        r_squared=float(r_squared),
    )


def _condition(name: str, value: float, own_bin: int, bounds, degenerate: bool) -> str:
    if degenerate:
        return f"{name} = {value:.4g}"
    q1, q2, q3 = bounds
    if own_bin == 0:
        return f"{name} <= {q1:.4g}"
    if own_bin == 1:
        return f"{q1:.4g} < {name} <= {q2:.4g}"
    if own_bin == 2:
        return f"{q2:.4g} < {name} <= {q3:.4g}"
    return f"{q3:.4g} < {name}"


def _model_outputs(model, windows) -> np.ndarray:
    try:
        out = np.asarray(model(windows), dtype=np.float64).reshape(-1)
    except Exception as exc:  # noqa: BLE001 - the model is arbitrary user code
        for i in range(len(windows)):
            try:
                model(windows[i : i + 1])
            except Exception:
                raise NumericError(
                    f"black-box model failed on perturbation {i}: {exc}"
                ) from exc
        raise NumericError(f"black-box model failed: {exc}") from exc
    if out.shape[0] != len(windows):
        raise DataError("model returned a wrong number of outputs")
    bad = ~np.isfinite(out)
    if bad.any():
        raise NumericError(
            f"non-finite model output at perturbation {int(np.argmax(bad))}"
        )
    return out


def explain_instance(
    model, x, bins: FeatureBins, config: ExplainerConfig | None = None
) -> Explanation:
    """Explain one window's prediction with a local linear surrogate.

    ``model`` must map a (n, lookback, features) array to n outputs;
    every perturbed flat vector is unflattened back to window shape
    before the call, so the model sees exactly its training layout.
    """
    config = config or ExplainerConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("instance must be a (lookback, features) window")
    lookback, width = x.shape
    flat, _ = flatten(x)
    d = bins.n_features
    if flat.shape != (d,):
        raise DataError("instance does not match the discretization")
    if config.num_features > d:
        raise DataError("num_features exceeds the flattened feature count")
    kernel_width = config.kernel_width or 0.75 * np.sqrt(d)

    values, binary = perturb(flat, bins, config.num_samples, seed=config.seed)
    windows = values.reshape(config.num_samples, lookback, width)
    outputs = _model_outputs(model, windows)
    distance = np.sqrt((1.0 - binary).sum(axis=1))
    weights = kernel(distance, kernel_width)

    informative = np.flatnonzero(~bins.uninformative)
    own_bin = bin_index(flat, bins)
    ranked = []
    r_squared = 1.0
    intercept = float(outputs[0])
    if informative.size > 0:
        k_fit = min(config.num_features, informative.size)
        surrogate = fit_surrogate(
            binary[:, informative], outputs, weights, num_features=k_fit
        )
        r_squared = surrogate.r_squared
        intercept = surrogate.intercept
        chosen = informative[surrogate.indices]
        order = np.argsort(-np.abs(surrogate.coefficients), kind="stable")
        ranked = [(int(chosen[i]), float(surrogate.coefficients[i])) for i in order]
    for j in np.flatnonzero(bins.uninformative):
        if len(ranked) >= config.num_features:
            break
        ranked.append((int(j), 0.0))

    conditions = tuple(
        (
            _condition(
                bins.names[j],
                flat[j],
                int(own_bin[j]),
                bins.boundaries[j],
                bool(bins.uninformative[j]),
            ),
            weight,
        )
        for j, weight in ranked
    )
    feature_values = tuple((bins.names[j], float(flat[j])) for j, _ in ranked)
    return Explanation(
        predicted_value=float(outputs[0]),
        local_range=(float(outputs.min()), float(outputs.max())),
        conditions=conditions,
        feature_values=feature_values,
        r_squared=float(r_squared),
        intercept=float(intercept),
    )


def format_explanation(expl: Explanation) -> str:
    """Three-section plain-text report: prediction, conditions, values."""
    lines = [
        f"Predicted value: {expl.predicted_value:.6g}",
        f"  local min {expl.local_range[0]:.6g}   local max {expl.local_range[1]:.6g}",
        f"  surrogate weighted R^2: {expl.r_squared:.4f}",
        "",
        "Negative and positive conditions:",
    ]
    for condition, weight in expl.conditions:
        lines.append(f"  {weight:+12.6g}  {condition}")
    lines.append("")
    lines.append("Feature values:")
    for name, value in expl.feature_values:
        lines.append(f"  {name} = {value:.6g}")
    return "\n".join(lines) + "\n"


def explanation_rows(expl: Explanation):
    """CSV-ready rows: one per reported condition, ranked by weight."""
    header = ("rank", "condition", "weight", "feature", "value")
    rows = [
        (rank + 1, condition, weight, name, value)
        for rank, ((condition, weight), (name, value)) in enumerate(
            zip(expl.conditions, expl.feature_values)
        )
    ]
    return header, rows
