"""Forecast evaluation: error metrics, rank tests, and report tables.

Metrics are reported for the full test period and for four volatility
quartiles, where observations are assigned by the rank of the actual
volatility on their date.  Model pairs are compared with a two-sided
Mann-Whitney U test on their per-date absolute errors: the metric
itself is a scalar, so only the error distributions admit a rank test.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

__all__ = [
    "SEGMENTS",
    "SegmentMetrics",
    "MetricReport",
    "TestResult",
    "ImprovementReport",
    "mae",
    "rmse",
    "mann_whitney_u",
    "quartile_assignments",
    "quartile_metrics",
    "directional_accuracy",
    "improvement",
    "metric_table",
    "improvement_table",
    "comparison_table",
    "format_table",
    "write_csv_table",
]

SEGMENTS = ("full", "Q1", "Q2", "Q3", "Q4")

# largest n*m for which the exact permutation distribution is enumerated
EXACT_LIMIT = 64


def _paired(preds, actuals):
    preds = np.asarray(preds, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    if preds.size == 0:
        raise DataError("empty input")
    if preds.shape != actuals.shape:
        raise DataError("prediction and actual lengths differ")
    return preds, actuals


def mae(preds, actuals) -> float:
    """Mean absolute error."""
    preds, actuals = _paired(preds, actuals)
    return float(np.mean(np.abs(preds - actuals)))


def rmse(preds, actuals) -> float:
    """Root mean squared error."""
    preds, actuals = _paired(preds, actuals)
    return float(np.sqrt(np.mean((preds - actuals) ** 2)))


@dataclass(frozen=True)
class SegmentMetrics:
    mae: float
    rmse: float
    count: int


@dataclass(frozen=True)
class MetricReport:
    """MAE and RMSE per segment for one model variant."""

    variant: str
    segments: dict

    def __post_init__(self) -> None:
        for name, seg in self.segments.items():
            if seg.rmse < seg.mae - 1e-12:
                raise DataError(f"segment {name}: RMSE below MAE")
            if seg.count < 1:
                raise DataError(f"segment {name}: empty")
        quartiles = [s for n, s in self.segments.items() if n != "full"]
        if "full" in self.segments and len(quartiles) == 4:
            counts = [s.count for s in quartiles]
            if sum(counts) != self.segments["full"].count:
                raise DataError("quartile counts do not sum to the full count")
            if max(counts) - min(counts) > 1:
                raise DataError("quartile counts differ by more than one")


@dataclass(frozen=True)
class TestResult:
    """Mann-Whitney U outcome for one pair of error samples."""

    __test__ = False  # keep pytest from collecting this as a test class

    u: float
    z: float
    p_value: float
    n: int
    m: int
    method: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.u <= self.n * self.m:
            raise DataError("U outside [0, n*m]")
        if not 0.0 <= self.p_value <= 1.0:
            raise DataError("p-value outside [0, 1]")


@dataclass(frozen=True)
class ImprovementReport:
    """Percentage change of a challenger's metrics relative to a base model."""

    base_variant: str
    challenger_variant: str
    segments: dict  # name -> {"mae": pct, "rmse": pct}; negative = worse


def _tie_corrected_sigma(ranks: np.ndarray, n: int, m: int) -> float:
    big_n = n + m
    _, counts = np.unique(ranks, return_counts=True)
    ties = float(np.sum(counts.astype(np.float64) ** 3 - counts))
    variance = (n * m / 12.0) * ((big_n**3 - big_n - ties) / (big_n * (big_n - 1)))
    return math.sqrt(max(variance, 0.0))


def _exact_two_sided_p(ranks: np.ndarray, n: int, u: float) -> float:
    """Two-sided p by enumerating every assignment of ranks to the first sample.

    The permutation distribution of U is symmetric about n*m/2 even under
    ties, so the two-sided p-value is the mass at least as far from the
    center as the observed U.
    """
    big_n = len(ranks)
    center = n * (big_n - n) / 2.0
    observed = abs(u - center) - 1e-9
    offset = n * (n + 1) / 2.0
    extreme = 0
    total = 0
    for combo in itertools.combinations(range(big_n), n):
        u_perm = ranks[list(combo)].sum() - offset
        total += 1
        if abs(u_perm - center) >= observed:
            extreme += 1
    return extreme / total


def mann_whitney_u(a, b, method: str = "auto") -> TestResult:
    """Two-sided Mann-Whitney U test with midrank tie handling.

    Small problems (n*m <= 64) are enumerated exactly; larger ones use
    the normal approximation with tie-corrected variance and continuity
    correction.  The reported U counts wins of the first sample.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DataError("empty sample")
    if method not in ("auto", "exact", "normal"):
        raise DataError(f"unknown method {method!r}")
    n, m = len(a), len(b)
    ranks = rankdata(np.concatenate([a, b]))
    u = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    mu = n * m / 2.0
    sigma = _tie_corrected_sigma(ranks, n, m)
    if sigma == 0.0:
        z = 0.0
    else:
        z = (u - mu - 0.5 * np.sign(u - mu)) / sigma
    if method == "exact" or (method == "auto" and n * m <= EXACT_LIMIT):
        p = _exact_two_sided_p(ranks, n, u)
        used = "exact"
    else:
        p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
        used = "normal"
    return TestResult(u=u, z=float(z), p_value=p, n=n, m=m, method=used)


def quartile_assignments(actuals) -> np.ndarray:
    """Quartile index (0..3) per observation, split by rank of the actual.

    Ranks use a stable sort, so tied values keep date order and each
    quartile holds floor(n/4) or ceil(n/4) observations.
    """
    actuals = np.asarray(actuals, dtype=np.float64)
    n = actuals.size
    if n < 4:
        raise DataError("need at least 4 observations for quartiles")
    order = np.argsort(actuals, kind="stable")
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = (np.arange(n) * 4) // n
    return assignment


def quartile_metrics(run) -> MetricReport:
    """MAE and RMSE for the full run and per quartile of actual volatility."""
    preds, actuals = _paired(run.predictions, run.actuals)
    which = quartile_assignments(actuals)
    segments = {"full": SegmentMetrics(mae(preds, actuals), rmse(preds, actuals), len(preds))}
    for q in range(4):
        mask = which == q
        segments[f"Q{q + 1}"] = SegmentMetrics(
            mae(preds[mask], actuals[mask]),
            rmse(preds[mask], actuals[mask]),
            int(mask.sum()),
        )
    label = getattr(run.variant, "value", run.variant)
    return MetricReport(variant=str(label), segments=segments)


def directional_accuracy(run, horizon: int) -> float:
    """Percentage of dates where the forecast movement sign was right.

    Movement is measured against the actual value ``horizon`` days
    earlier; a zero difference only matches another zero difference.
    """
    if horizon < 1:
        raise DataError("horizon must be positive")
    preds, actuals = _paired(run.predictions, run.actuals)
    if len(preds) <= horizon:
        raise DataError(f"run of {len(preds)} rows cannot support horizon {horizon}")
    predicted_move = preds[horizon:] - actuals[:-horizon]
    actual_move = actuals[horizon:] - actuals[:-horizon]
    hits = np.sign(predicted_move) == np.sign(actual_move)
    return float(100.0 * hits.mean())


def improvement(base: MetricReport, challenger: MetricReport) -> ImprovementReport:
    """Percentage improvement of the challenger over the base, per segment."""
    if set(base.segments) != set(challenger.segments):
        raise DataError("reports cover different segments")
    out = {}
    for name, b in base.segments.items():
        c = challenger.segments[name]
        if b.mae == 0.0 or b.rmse == 0.0:
            raise DataError(f"segment {name}: zero base metric")
        out[name] = {
            "mae": 100.0 * (b.mae - c.mae) / b.mae,
            "rmse": 100.0 * (b.rmse - c.rmse) / b.rmse,
        }
    return ImprovementReport(
        base_variant=base.variant,
        challenger_variant=challenger.variant,
        segments=out,
    )


def metric_table(reports):
    """Rows of (variant, segment, mae, rmse, count) for a set of reports."""
    header = ("variant", "segment", "mae", "rmse", "count")
    rows = [
        (r.variant, name, seg.mae, seg.rmse, seg.count)
        for r in reports
        for name, seg in r.segments.items()
    ]
    return header, rows


def improvement_table(report: ImprovementReport):
    header = ("base", "challenger", "segment", "mae_pct", "rmse_pct")
    rows = [
        (report.base_variant, report.challenger_variant, name, v["mae"], v["rmse"])
        for name, v in report.segments.items()
    ]
    return header, rows


def comparison_table(results: dict):
    """Rows for a mapping of 'base vs challenger' labels to test results."""
    header = ("comparison", "u", "z", "p_value", "n", "m", "method")
    rows = [
        (label, t.u, t.z, t.p_value, t.n, t.m, t.method)
        for label, t in results.items()
    ]
    return header, rows


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def format_table(header, rows) -> str:
    """Aligned plain-text table with a dashed rule under the header."""
    cells = [[_cell(v) for v in row] for row in rows]
    widths = [
        max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
        for i, h in enumerate(header)
    ]
    def line(parts):
        return "  ".join(p.ljust(w) for p, w in zip(parts, widths)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), rule] + [line(r) for r in cells]) + "\n"


def write_csv_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(float(v)) if isinstance(v, float) else v for v in row]
            )
