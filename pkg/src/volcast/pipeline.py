"""Feature assembly, sequence windowing, and walk-forward forecasting.

Four model variants share one protocol.  The pure GARCH variant refits
an expanding-window GARCH model and forecasts one step ahead; the LSTM
variants train a recurrent network on per-variant feature sets:

    LSTM            log returns, lagged volatility
    LSTM_GARCH      ... plus the one-step GARCH volatility forecast
    LSTM_GARCH_VIX  ... plus the VIX close

The target everywhere is the 22-day rolling standard deviation of
returns.  A feature row for day t only contains information available
at the end of day t (the volatility feature is lagged by one day, the
GARCH forecast for day t is built from returns through t-1), and a
sequence predicting day t+1 ends at row t, so the whole pipeline is
leak-free by construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict, replace
from enum import Enum
from functools import reduce

import numpy as np

from .errors import DataError, NumericError
from . import garch
from .neural import LstmNetwork, NetworkConfig, predict, train
from .timeseries import (
    MinMaxScaler,
    PriceSeries,
    ReturnSeries,
    lag,
    log_returns,
    pct_change,
    rolling_volatility,
)

__all__ = [
    "ModelVariant",
    "VARIANT_FEATURES",
    "FeatureTable",
    "WindowedDataset",
    "WalkForwardConfig",
    "WindowMeta",
    "WalkForwardRun",
    "GarchForecastSeries",
    "RunAllResult",
    "build_features",
    "make_sequences",
    "garch_forecast_series",
    "walk_forward",
    "run_all",
    "write_run_csv",
    "read_run_csv",
]


class ModelVariant(Enum):
    GARCH = "garch"
    LSTM = "lstm"
    LSTM_GARCH = "lstm-garch"
    LSTM_GARCH_VIX = "lstm-garch-vix"


# Feature columns per variant, in table order.  The pure GARCH variant
# carries only the return series it is fitted on.
VARIANT_FEATURES = {
    ModelVariant.GARCH: ("returns",),
    ModelVariant.LSTM: ("returns", "lagged_volatility"),
    ModelVariant.LSTM_GARCH: ("returns", "lagged_volatility", "garch_forecast"),
    ModelVariant.LSTM_GARCH_VIX: (
        "returns",
        "lagged_volatility",
        "garch_forecast",
        "vix_close",
    ),
}


@dataclass(frozen=True)
class FeatureTable:
    """Date-aligned feature matrix plus the volatility target column."""

    dates: np.ndarray
    features: np.ndarray
    feature_names: tuple
    target: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.dates)
        if self.features.shape != (n, len(self.feature_names)):
            raise DataError("feature matrix does not match names and dates")
        if self.target.shape != (n,):
            raise DataError("target column does not match dates")
        if n > 1 and not np.all(np.diff(self.dates).astype(int) > 0):
            raise DataError("dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.dates)

    def restrict(self, dates) -> "FeatureTable":
        """Keep only rows whose date appears in ``dates``."""
        mask = np.isin(self.dates, dates)
        return FeatureTable(
            dates=self.dates[mask],
            features=self.features[mask],
            feature_names=self.feature_names,
            target=self.target[mask],
        )


@dataclass(frozen=True)
class WindowedDataset:
    """Sequences of lookback rows, each paired with the next row's target."""

    sequences: np.ndarray
    targets: np.ndarray
    dates: np.ndarray
    lookback: int

    def __post_init__(self) -> None:
        m = len(self.targets)
        if self.sequences.shape[0] != m or len(self.dates) != m:
            raise DataError("sequence, target and date counts disagree")
        if self.sequences.ndim != 3 or self.sequences.shape[1] != self.lookback:
            raise DataError("sequences must be (samples, lookback, features)")

    def __len__(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class GarchForecastSeries:
    """One-step volatility forecasts, each made from data before its date."""

    dates: np.ndarray
    values: np.ndarray
    order: tuple
    refit_rows: tuple  # indices into ``dates`` where the model was refitted

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class WalkForwardConfig:
    """Row counts for the expanding walk-forward protocol.

    All counts are trading-day rows of the joined feature table.  The
    validation block is always the ``initial_val`` rows before the test
    window; training absorbs older validation rows as windows advance.
    The GARCH refit cadence is a separate knob because the reference
    protocol refits it every day while the network refits yearly.
    """

    initial_train: int = 3024
    initial_val: int = 756
    refit_stride: int = 252
    horizon: int = 1
    garch_refit_stride: int = 1
    garch_order: tuple = (1, 1)

    def __post_init__(self) -> None:
        if min(self.initial_train, self.initial_val, self.refit_stride) < 1:
            raise DataError("window sizes must be positive")
        if self.horizon != 1:
            raise DataError("only one-step-ahead forecasting is supported")
        if self.garch_refit_stride < 1:
            raise DataError("garch_refit_stride must be positive")
        p, q = self.garch_order
        if p < 0 or q < 0 or p + q < 1:
            raise DataError(f"unusable GARCH order {self.garch_order}")

    @property
    def first_test_row(self) -> int:
        return self.initial_train + self.initial_val


@dataclass(frozen=True)
class WindowMeta:
    """Per-refit bookkeeping attached to a run."""

    index: int
    first_test_row: int
    test_rows: int
    train_rows: int = 0
    epochs_run: int | None = None
    best_val_loss: float | None = None
    feature_scaler: MinMaxScaler | None = None
    target_scaler: MinMaxScaler | None = None
    converged: bool | None = None
    init_retries: int = 0
    truncated: bool = False
    network: object | None = None  # trained net copy, kept only on request


@dataclass(frozen=True)
class WalkForwardRun:
    variant: ModelVariant
    dates: np.ndarray
    predictions: np.ndarray
    actuals: np.ndarray
    window_index: np.ndarray
    seed: int
    lookback: int
    windows: tuple

    def __post_init__(self) -> None:
        n = len(self.dates)
        if not (len(self.predictions) == len(self.actuals) == len(self.window_index) == n):
            raise DataError("run columns differ in length")
        if n == 0:
            raise DataError("empty run")
        if n > 1 and not np.all(np.diff(self.dates).astype(int) > 0):
            raise DataError("prediction dates must be strictly increasing")
        if np.any(self.predictions < 0):
            raise DataError("negative volatility prediction")

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class RunAllResult:
    runs: dict
    errors: dict


def build_features(
    variant: ModelVariant,
    sp500: PriceSeries,
    vix: PriceSeries | None = None,
    garch_forecasts: GarchForecastSeries | None = None,
    return_kind: str = "log",
    vol_window: int = 22,
) -> FeatureTable:
    """Assemble the per-variant feature table, inner-joined on dates.

    The target column is the ``vol_window``-day rolling standard
    deviation of returns at each row's own date; the feature columns are
    all lag-safe for predicting the next row.
    """
    if return_kind == "log":
        returns = log_returns(sp500)
    elif return_kind == "pct":
        returns = pct_change(sp500)
    else:
        raise DataError(f"unknown return kind {return_kind!r}")
    needed = VARIANT_FEATURES[variant]
    if "garch_forecast" in needed and garch_forecasts is None:
        raise DataError(f"variant {variant.value} requires GARCH forecasts")
    if "vix_close" in needed and vix is None:
        raise DataError(f"variant {variant.value} requires a VIX series")

    vol = rolling_volatility(returns, window=vol_window)
    columns = {"returns": (returns.dates, returns.values)}
    if "lagged_volatility" in needed:
        lagged = lag(vol, 1)
        columns["lagged_volatility"] = (lagged.dates, lagged.values)
    if "garch_forecast" in needed:
        columns["garch_forecast"] = (garch_forecasts.dates, garch_forecasts.values)
    if "vix_close" in needed:
        columns["vix_close"] = (vix.dates, vix.close)

    dates = reduce(np.intersect1d, [columns[name][0] for name in needed] + [vol.dates])
    if len(dates) == 0:
        raise DataError("feature columns share no dates")
    matrix = np.empty((len(dates), len(needed)))
    for j, name in enumerate(needed):
        col_dates, col_values = columns[name]
        matrix[:, j] = col_values[np.searchsorted(col_dates, dates)]
    target = vol.values[np.searchsorted(vol.dates, dates)]
    return FeatureTable(
        dates=dates, features=matrix, feature_names=needed, target=target
    )


def make_sequences(table: FeatureTable, lookback: int = 22) -> WindowedDataset:
    """Window the table: sample i covers rows [i, i+lookback), target row i+lookback."""
    if lookback < 1:
        raise DataError("lookback must be positive")
    n = len(table)
    if n <= lookback:
        raise DataError(f"table of {n} rows cannot fill lookback {lookback}")
    sequences = _sequence_view(table.features, lookback, n)
    return WindowedDataset(
        sequences=sequences,
        targets=table.target[lookback:].copy(),
        dates=table.dates[lookback:].copy(),
        lookback=lookback,
    )


def _sequence_view(features: np.ndarray, lookback: int, end_row: int) -> np.ndarray:
    """Sequences for target rows [lookback, end_row) as a contiguous array."""
    window = np.lib.stride_tricks.sliding_window_view(
        features[:end_row], lookback, axis=0
    )
    return np.ascontiguousarray(window[: end_row - lookback].transpose(0, 2, 1))


def _fit_expanding_garch(values, dates, order, refit_stride, start_row):
    """Shared expanding-window GARCH loop.

    Yields one sigma forecast per row in [start_row, len(values)); the
    forecast for row t uses values[:t] only.  Returns (forecasts, refit
    row offsets, convergence flags).
    """
    p, q = order
    n = len(values)
    preds = np.empty(n - start_row)
    refit_rows = []
    converged = []
    fitted = None
    for j, t in enumerate(range(start_row, n)):
        history = ReturnSeries(dates[:t], values[:t], "log")
        if j % refit_stride == 0:
            warm = (fitted.params,) if fitted is not None else ()
            fitted = garch.fit(history, p, q, restarts=0 if warm else 2, warm_starts=warm)
            if not fitted.converged:
                retry = garch.fit(history, p, q, restarts=2, warm_starts=warm)
                if retry.loglik >= fitted.loglik:
                    fitted = retry
            refit_rows.append(j)
            converged.append(fitted.converged)
        preds[j] = garch.forecast_one_step(fitted, history)
    return preds, tuple(refit_rows), converged


def garch_forecast_series(
    returns: ReturnSeries,
    order: tuple = (1, 1),
    min_history: int = 252,
    refit_stride: int = 1,
) -> GarchForecastSeries:
    """One-step GARCH volatility forecasts along an expanding window.

    The value dated t is the forecast FOR day t, fitted and filtered on
    returns strictly before t.  The model is refitted every
    ``refit_stride`` rows and reused (with updated history) in between.
    """
    if min_history < 50:
        raise DataError("min_history must be at least 50 rows")
    if len(returns) <= min_history:
        raise DataError("return series shorter than min_history")
    preds, refit_rows, _ = _fit_expanding_garch(
        returns.values, returns.dates, order, refit_stride, min_history
    )
    return GarchForecastSeries(
        dates=returns.dates[min_history:].copy(),
        values=preds,
        order=tuple(order),
        refit_rows=refit_rows,
    )


def _derive_seeds(seed: int, count: int):
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(2**63, size=count)]


def _initialize_live(config: NetworkConfig, probe_x, seeds):
    """Initialize a network, retrying on a dead rectified head.

    A head whose pre-activation starts negative for every probe sample
    has zero gradient everywhere and would never train; such draws are
    rare but fatal, so they are discarded deterministically.
    """
    for tries, s in enumerate(seeds):
        net = LstmNetwork.initialize(config, seed=s)
        if net.output_activation != "relu" or np.any(predict(net, probe_x) > 0.0):
            return net, tries
    return net, len(seeds) - 1


def walk_forward(
    variant: ModelVariant,
    table: FeatureTable,
    wf: WalkForwardConfig | None = None,
    net_config: NetworkConfig | None = None,
    lookback: int = 22,
    seed: int = 0,
    keep_networks: bool = False,
) -> WalkForwardRun:
    """Run the expanding walk-forward protocol for one variant.

    Every window refits scalers on its training rows only, trains the
    network (warm-started from the previous window), predicts the next
    ``refit_stride`` rows one step ahead, and then advances.  The pure
    GARCH variant replaces the network with a GARCH refit-and-forecast
    loop on unscaled returns.
    """
    wf = wf or WalkForwardConfig()
    n = len(table)
    first_test = wf.first_test_row
    if n < first_test + 1:
        raise DataError(
            f"need at least {first_test + 1} rows, table has {n}"
        )
    if variant is ModelVariant.GARCH:
        return _garch_run(table, wf, seed)
    if lookback >= wf.initial_train:
        raise DataError("lookback must be smaller than the initial training block")

    base = asdict(net_config) if net_config is not None else asdict(
        NetworkConfig(input_size=len(table.feature_names))
    )
    base["input_size"] = len(table.feature_names)
    starts = list(range(first_test, n, wf.refit_stride))
    # init seeds come off the stream first so that rerunning on a table
    # truncated to fewer windows reproduces the early windows exactly
    seeds = _derive_seeds(seed, len(starts) + 8)
    init_seeds, window_seeds = seeds[:8], seeds[8:]

    predictions = np.empty(n - first_test)
    window_index = np.empty(n - first_test, dtype=np.int64)
    metas = []
    net = None
    for w, test_start in enumerate(starts):
        test_end = min(test_start + wf.refit_stride, n)
        train_end = test_start - wf.initial_val
        feature_scaler = MinMaxScaler.fit(table.features[:train_end])
        target_scaler = MinMaxScaler.fit(table.target[:train_end, np.newaxis])
        scaled_x = feature_scaler.transform(table.features[:test_end])
        scaled_y = target_scaler.transform(table.target[:test_end, np.newaxis])[:, 0]
        sequences = _sequence_view(scaled_x, lookback, test_end)
        targets = scaled_y[lookback:test_end]
        train_slice = slice(0, train_end - lookback)
        val_slice = slice(train_end - lookback, test_start - lookback)
        test_slice = slice(test_start - lookback, test_end - lookback)

        config = NetworkConfig(**{**base, "seed": window_seeds[w]})
        retries = 0
        if net is None:
            probe = sequences[train_slice][:64]
            net, retries = _initialize_live(config, probe, init_seeds)
        net.config = config
        try:
            net, history = train(
                net,
                (sequences[train_slice], targets[train_slice]),
                (sequences[val_slice], targets[val_slice]),
            )
        except NumericError as exc:
            raise NumericError(f"window {w}: {exc}") from exc
        scaled_preds = predict(net, sequences[test_slice])
        raw = target_scaler.inverse(scaled_preds[:, np.newaxis])[:, 0]
        predictions[test_start - first_test : test_end - first_test] = raw
        window_index[test_start - first_test : test_end - first_test] = w
        metas.append(
            WindowMeta(
                index=w,
                first_test_row=test_start,
                test_rows=test_end - test_start,
                train_rows=train_end,
                epochs_run=len(history.train_loss),
                best_val_loss=history.best_val_loss,
                feature_scaler=feature_scaler,
                target_scaler=target_scaler,
                init_retries=retries,
                truncated=test_end - test_start < wf.refit_stride,
                network=net.copy() if keep_networks else None,
            )
        )
    return WalkForwardRun(
        variant=variant,
        dates=table.dates[first_test:].copy(),
        predictions=predictions,
        actuals=table.target[first_test:].copy(),
        window_index=window_index,
        seed=seed,
        lookback=lookback,
        windows=tuple(metas),
    )


def _garch_run(table: FeatureTable, wf: WalkForwardConfig, seed: int) -> WalkForwardRun:
    col = table.feature_names.index("returns")
    values = table.features[:, col]
    first_test = wf.first_test_row
    preds, refit_rows, converged = _fit_expanding_garch(
        values, table.dates, wf.garch_order, wf.garch_refit_stride, first_test
    )
    n = len(table)
    window_index = np.arange(n - first_test) // wf.garch_refit_stride
    metas = tuple(
        WindowMeta(
            index=i,
            first_test_row=first_test + row,
            test_rows=min(wf.garch_refit_stride, n - first_test - row),
            train_rows=first_test + row,
            converged=flag,
        )
        for i, (row, flag) in enumerate(zip(refit_rows, converged))
    )
    return WalkForwardRun(
        variant=ModelVariant.GARCH,
        dates=table.dates[first_test:].copy(),
        predictions=preds,
        actuals=table.target[first_test:].copy(),
        window_index=window_index,
        seed=seed,
        lookback=0,
        windows=metas,
    )


def run_all(
    variants,
    sp500: PriceSeries,
    vix: PriceSeries | None = None,
    wf: WalkForwardConfig | None = None,
    net_config: NetworkConfig | None = None,
    lookback: int = 22,
    seed: int = 0,
    return_kind: str = "log",
    garch_feature_min_history: int = 252,
) -> RunAllResult:
    """Run several variants on one snapshot with forced date alignment.

    All tables are truncated to their common dates before any window
    arithmetic, so every run predicts exactly the same date vector and
    error comparisons are paired.  Each variant gets a child seed derived
    from the master seed and its fixed position in the variant order, so
    adding or removing variants does not reshuffle the others.
    """
    wf = wf or WalkForwardConfig()
    variants = list(variants)
    ordering = list(ModelVariant)
    forecasts = None
    if any("garch_forecast" in VARIANT_FEATURES[v] for v in variants):
        returns = log_returns(sp500) if return_kind == "log" else pct_change(sp500)
        forecasts = garch_forecast_series(
            returns,
            order=wf.garch_order,
            min_history=garch_feature_min_history,
            refit_stride=wf.garch_refit_stride,
        )
    tables = {}
    errors = {}
    for v in variants:
        try:
            tables[v] = build_features(
                v, sp500, vix=vix, garch_forecasts=forecasts, return_kind=return_kind
            )
        except (DataError, NumericError) as exc:
            errors[v] = exc
    if not tables:
        return RunAllResult(runs={}, errors=errors)
    common = reduce(np.intersect1d, [t.dates for t in tables.values()])
    runs = {}
    for v, t in tables.items():
        child = np.random.SeedSequence(seed, spawn_key=(ordering.index(v),))
        variant_seed = int(child.generate_state(1)[0])
        try:
            runs[v] = walk_forward(
                v,
                t.restrict(common),
                wf=wf,
                net_config=net_config,
                lookback=lookback,
                seed=variant_seed,
            )
        except (DataError, NumericError) as exc:
            errors[v] = exc
    return RunAllResult(runs=runs, errors=errors)


def write_run_csv(run: WalkForwardRun, path) -> None:
    """Write predictions as date,actual,prediction,window_index rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "actual", "prediction", "window_index"])
        for i in range(len(run)):
            writer.writerow(
                [
                    str(run.dates[i]),
                    repr(float(run.actuals[i])),
                    repr(float(run.predictions[i])),
                    int(run.window_index[i]),
                ]
            )


def read_run_csv(path):
    """Read a run CSV back as (dates, actuals, predictions, window_index)."""
    dates, actuals, preds, windows = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "actual", "prediction", "window_index"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns {sorted(required)}")
        for row in reader:
            dates.append(np.datetime64(row["date"], "D"))
            actuals.append(float(row["actual"]))
            preds.append(float(row["prediction"]))
            windows.append(int(row["window_index"]))
    if not dates:
        raise DataError(f"{path}: no prediction rows")
    return (
        np.array(dates, dtype="datetime64[D]"),
        np.array(actuals),
        np.array(preds),
        np.array(windows, dtype=np.int64),
    )
