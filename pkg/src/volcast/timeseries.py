"""Price ingestion, return/volatility features, and per-segment Min-Max scaling."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from volcast.errors import DataError

__all__ = [
    "PriceSeries",
    "ReturnSeries",
    "VolatilitySeries",
    "MinMaxScaler",
    "IngestResult",
    "SummaryStats",
    "ingest_csv",
    "align_series",
    "log_returns",
    "pct_change",
    "rolling_volatility",
    "lag",
    "descriptive_stats",
]


def _as_dates(dates) -> np.ndarray:
    arr = np.asarray(dates, dtype="datetime64[D]")
    if arr.ndim != 1:
        raise DataError("dates must be one-dimensional")
    return arr


@dataclass(frozen=True)
class PriceSeries:
    """Dated closing prices for one instrument. Dates strictly increasing, closes > 0."""

    dates: np.ndarray
    close: np.ndarray

    def __post_init__(self):
        dates = _as_dates(self.dates)
        close = np.asarray(self.close, dtype=np.float64)
        if len(dates) != len(close):
            raise DataError("dates and close must be the same length")
        if len(dates) == 0:
            raise DataError("empty price series")
        if np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing with no duplicates")
        if not np.all(np.isfinite(close)) or np.any(close <= 0):
            raise DataError("close prices must be finite and strictly positive")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "close", close)

    def __len__(self) -> int:
        return len(self.close)


@dataclass(frozen=True)
class ReturnSeries:
    """Period-over-period returns; ``kind`` is 'log' or 'pct'."""

    dates: np.ndarray
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("log", "pct"):
            raise DataError(f"unknown return kind {self.kind!r}")
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if len(self.dates) != len(self.values):
            raise DataError("dates and values must be the same length")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class VolatilitySeries:
    """Rolling dispersion per date; defined only where a full window exists."""

    dates: np.ndarray
    values: np.ndarray
    window: int

    def __post_init__(self):
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if len(self.dates) != len(self.values):
            raise DataError("dates and values must be the same length")
        if np.any(self.values < 0):
            raise DataError("volatility values must be non-negative")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class IngestResult:
    """Parsed series plus one (row_number, reason) entry per rejected row."""

    series: PriceSeries
    skipped: tuple


def ingest_csv(path, column_map=None) -> IngestResult:
    """Parse a CSV with a date and a close column into a PriceSeries.

    Rows are sorted by date.  Rows with a missing, non-numeric, or
    non-positive close are skipped, as are repeats of an already-seen
    date; every skip is reported with its 1-based data row number.
    """
    column_map = dict(column_map or {})
    date_col = column_map.get("date", "Date")
    close_col = column_map.get("close", "Close")
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if date_col not in header or close_col not in header:
            raise DataError(
                f"columns {date_col!r}/{close_col!r} not found in header {header}"
            )
        rows = []
        skipped = []
        for i, row in enumerate(reader, start=1):
            raw_date = (row.get(date_col) or "").strip()
            raw_close = (row.get(close_col) or "").strip()
            try:
                date = np.datetime64(raw_date, "D")
            except ValueError:
                skipped.append((i, f"unparseable date {raw_date!r}"))
                continue
            try:
                close = float(raw_close)
            except ValueError:
                skipped.append((i, f"unparseable close {raw_close!r}"))
                continue
            if not math.isfinite(close) or close <= 0:
                skipped.append((i, f"non-positive close {raw_close!r}"))
                continue
            rows.append((date, close, i))
    rows.sort(key=lambda r: r[0])
    dates, closes = [], []
    for date, close, i in rows:
        if dates and date == dates[-1]:
            skipped.append((i, f"duplicate date {date}"))
            continue
        dates.append(date)
        closes.append(close)
    if not dates:
        raise DataError(f"no valid rows in {path}")
    series = PriceSeries(np.array(dates, dtype="datetime64[D]"), np.array(closes))
    return IngestResult(series, tuple(skipped))


def align_series(a: PriceSeries, b: PriceSeries):
    """Inner-join two price series on dates.

    Returns (a_aligned, b_aligned, dropped) where ``dropped`` counts rows
    present in only one of the inputs.  Mismatches are treated as data
    defects and dropped, never interpolated.
    """
    common, ia, ib = np.intersect1d(a.dates, b.dates, return_indices=True)
    if len(common) == 0:
        raise DataError("series share no dates")
    dropped = (len(a) - len(common)) + (len(b) - len(common))
    return (
        PriceSeries(common, a.close[ia]),
        PriceSeries(common, b.close[ib]),
        dropped,
    )


def log_returns(p: PriceSeries) -> ReturnSeries:
    """ln(close_t / close_{t-1}); one value per date from the second onward."""
    if len(p) < 2:
        raise DataError("need at least 2 prices for returns")
    values = np.log(p.close[1:] / p.close[:-1])
    return ReturnSeries(p.dates[1:], values, "log")


def pct_change(p: PriceSeries) -> ReturnSeries:
    """(close_t - close_{t-1}) / close_{t-1}; the simple arithmetic return."""
    if len(p) < 2:
        raise DataError("need at least 2 prices for returns")
    values = p.close[1:] / p.close[:-1] - 1.0
    return ReturnSeries(p.dates[1:], values, "pct")


def rolling_volatility(
    r: ReturnSeries, window: int = 22, annualization_factor: float | None = None
) -> VolatilitySeries:
    """Sample standard deviation (N-1 denominator) over a rolling window.

    The value at date t covers the ``window`` returns ending at t.  The
    optional annualization factor multiplies values by sqrt(factor);
    default is the raw daily scale.
    """
    if window < 2:
        raise DataError("window must be at least 2")
    if len(r) < window:
        raise DataError(f"series of length {len(r)} shorter than window {window}")
    frames = np.lib.stride_tricks.sliding_window_view(r.values, window)
    values = frames.std(axis=1, ddof=1)
    if annualization_factor is not None:
        values = values * math.sqrt(annualization_factor)
    return VolatilitySeries(r.dates[window - 1 :], values, window)


def lag(s: VolatilitySeries, k: int) -> VolatilitySeries:
    """Shift values forward by k days: output at t equals input at t-k.

    The first k dates have no lagged value and are dropped.
    """
    if k < 0:
        raise DataError("lag must be non-negative")
    if k >= len(s):
        raise DataError(f"lag {k} >= series length {len(s)}")
    if k == 0:
        return s
    return VolatilitySeries(s.dates[k:], s.values[:-k], s.window)


@dataclass(frozen=True)
class SummaryStats:
    count: int
    mean: float
    std: float
    minimum: float
    q25: float
    median: float
    q75: float
    maximum: float
    skewness: float | None
    kurtosis: float | None
    degenerate: bool = False


def descriptive_stats(x) -> SummaryStats:
    """Summary statistics with N-1 std, linear-interpolation quartiles, and
    skewness/kurtosis as standardized third and fourth sample moments
    (kurtosis is the raw moment ratio, ~3 for a normal sample).

    Zero-dispersion input flags skewness/kurtosis as undefined instead of
    dividing by zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise DataError("need at least 2 observations")
    mean = float(x.mean())
    std = float(x.std(ddof=1))
    q25, median, q75 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    centered = x - mean
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        return SummaryStats(
            x.size, mean, std, float(x.min()), q25, median, q75, float(x.max()),
            None, None, degenerate=True,
        )
    skew = float(np.mean(centered**3)) / m2**1.5
    kurt = float(np.mean(centered**4)) / m2**2
    return SummaryStats(
        x.size, mean, std, float(x.min()), q25, median, q75, float(x.max()),
        skew, kurt,
    )


@dataclass
class MinMaxScaler:
    """Column-wise min-max scaler: transform maps the fitted segment into [0, 1].

    Constant columns (max == min) transform to 0 and invert to the fitted
    minimum, keeping both directions well defined.
    """

    x_min: np.ndarray
    x_max: np.ndarray
    constant: np.ndarray = field(init=False)

    def __post_init__(self):
        self.x_min = np.atleast_1d(np.asarray(self.x_min, dtype=np.float64))
        self.x_max = np.atleast_1d(np.asarray(self.x_max, dtype=np.float64))
        if self.x_min.shape != self.x_max.shape:
            raise DataError("min and max shapes differ")
        if np.any(self.x_max < self.x_min):
            raise DataError("max below min")
        self.constant = self.x_max == self.x_min

    @classmethod
    def fit(cls, features) -> "MinMaxScaler":
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.size == 0:
            raise DataError("cannot fit scaler on an empty matrix")
        scaler = cls(features.min(axis=0), features.max(axis=0))
        if scaler.constant.any():
            warnings.warn(
                f"{int(scaler.constant.sum())} constant column(s); scaled to 0",
                stacklevel=2,
            )
        return scaler

    @property
    def n_features(self) -> int:
        return self.x_min.shape[0]

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :] if self.n_features > 1 else x[:, None]
        if x.shape[-1] != self.n_features:
            raise DataError(
                f"expected {self.n_features} columns, got {x.shape[-1]}"
            )
        return x

    def transform(self, x) -> np.ndarray:
        x = self._check(x)
        span = np.where(self.constant, 1.0, self.x_max - self.x_min)
        out = (x - self.x_min) / span
        return np.where(self.constant, 0.0, out)

    def inverse(self, y) -> np.ndarray:
        y = self._check(y)
        out = y * (self.x_max - self.x_min) + self.x_min
        return np.where(self.constant, self.x_min, out)
