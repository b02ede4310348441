import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import mannwhitneyu as scipy_mwu

from volcast.errors import DataError
from volcast.evaluate import (
    ImprovementReport,
    MetricReport,
    SegmentMetrics,
    TestResult,
    comparison_table,
    directional_accuracy,
    format_table,
    improvement,
    improvement_table,
    mae,
    mann_whitney_u,
    metric_table,
    quartile_assignments,
    quartile_metrics,
    rmse,
    write_csv_table,
)
from volcast.pipeline import ModelVariant, WalkForwardRun


def make_run(predictions, actuals, variant=ModelVariant.LSTM):
    predictions = np.asarray(predictions, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    n = len(predictions)
    return WalkForwardRun(
        variant=variant,
        dates=np.datetime64("2015-01-01", "D") + np.arange(n),
        predictions=predictions,
        actuals=actuals,
        window_index=np.zeros(n, dtype=np.int64),
        seed=0,
        lookback=5,
        windows=(),
    )


def report(variant, **segments):
    return MetricReport(
        variant=variant,
        segments={k: SegmentMetrics(*v) for k, v in segments.items()},
    )


class TestErrorMetrics:
    def test_perfect_forecast(self):
        x = np.array([0.1, 0.2, 0.3])
        assert mae(x, x) == 0.0
        assert rmse(x, x) == 0.0

    def test_hand_arithmetic(self):
        assert mae([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.5)
        assert rmse([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.58114, abs=1e-5)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            mae([], [])
        with pytest.raises(DataError):
            rmse([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(DataError):
            mae([1.0], [1.0, 2.0])

    @given(
        errors=st.lists(
            st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40
        )
    )
    def test_rmse_dominates_mae(self, errors):
        actuals = np.zeros(len(errors))
        assert rmse(errors, actuals) >= mae(errors, actuals) - 1e-12

    def test_equality_only_for_uniform_error(self):
        preds = np.array([1.0, 3.0, 5.0])
        actuals = preds - 0.5
        assert rmse(preds, actuals) == pytest.approx(mae(preds, actuals))
        actuals = preds - np.array([0.1, 0.5, 0.9])
        assert rmse(preds, actuals) > mae(preds, actuals)


class TestMannWhitney:
    def test_identical_samples(self):
        a = np.ones(10)
        result = mann_whitney_u(a, a)
        assert result.u == 50.0
        assert result.p_value == pytest.approx(1.0)
        small = mann_whitney_u([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert small.method == "exact"
        assert small.u == 4.5
        assert small.p_value == pytest.approx(1.0)

    def test_hand_enumeration(self):
        result = mann_whitney_u([1.0, 2.0], [3.0, 4.0])
        assert result.method == "exact"
        assert result.u == 0.0
        assert result.p_value == pytest.approx(1.0 / 3.0, abs=1e-4)

    def test_empty_sample_rejected(self):
        with pytest.raises(DataError):
            mann_whitney_u([], [1.0])

    def test_unknown_method_rejected(self):
        with pytest.raises(DataError):
            mann_whitney_u([1.0], [2.0], method="bootstrap")

    def test_u_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 6, 25).astype(float)
        b = rng.integers(0, 6, 31).astype(float)
        forward = mann_whitney_u(a, b)
        backward = mann_whitney_u(b, a)
        assert forward.u + backward.u == len(a) * len(b)
        assert forward.p_value == pytest.approx(backward.p_value)

    def test_exact_matches_reference_without_ties(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n, m = rng.integers(2, 9, 2)
            pool = rng.permutation(np.arange(50.0))
            a, b = pool[:n], pool[n : n + m]
            mine = mann_whitney_u(a, b, method="exact")
            ref = scipy_mwu(a, b, alternative="two-sided", method="exact")
            assert mine.u == ref.statistic
            assert mine.p_value == pytest.approx(ref.pvalue, abs=1e-12)

    def test_normal_matches_reference_with_ties(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            n, m = rng.integers(3, 60, 2)
            a = rng.integers(0, 8, n).astype(float)
            b = rng.integers(0, 8, m).astype(float)
            mine = mann_whitney_u(a, b, method="normal")
            ref = scipy_mwu(a, b, alternative="two-sided", method="asymptotic")
            assert mine.u == ref.statistic
            assert mine.p_value == pytest.approx(ref.pvalue, abs=1e-12)

    @settings(max_examples=150, deadline=None)
    @given(
        a=st.lists(st.integers(0, 5), min_size=4, max_size=8),
        b=st.lists(st.integers(0, 5), min_size=4, max_size=8),
    )
    def test_normal_tracks_exact_in_decision_region(self, a, b):
        # the approximation is only trusted where it affects conclusions;
        # far from significance it can drift by several times this bound
        exact = mann_whitney_u(np.array(a, float), np.array(b, float), method="exact")
        approx = mann_whitney_u(np.array(a, float), np.array(b, float), method="normal")
        if exact.p_value <= 0.1:
            assert abs(exact.p_value - approx.p_value) <= 0.05

    def test_result_invariants(self):
        with pytest.raises(DataError):
            TestResult(u=-1.0, z=0.0, p_value=0.5, n=2, m=2, method="exact")
        with pytest.raises(DataError):
            TestResult(u=1.0, z=0.0, p_value=1.5, n=2, m=2, method="exact")


class TestQuartiles:
    def test_partition_of_eight(self):
        actuals = np.array([50.0, 10.0, 80.0, 30.0, 70.0, 20.0, 60.0, 40.0])
        which = quartile_assignments(actuals)
        by_value = {v: q for v, q in zip(actuals, which)}
        assert by_value[10.0] == by_value[20.0] == 0
        assert by_value[30.0] == by_value[40.0] == 1
        assert by_value[50.0] == by_value[60.0] == 2
        assert by_value[70.0] == by_value[80.0] == 3

    @given(
        values=st.lists(
            st.floats(0, 1000, allow_nan=False), min_size=4, max_size=60
        )
    )
    def test_partition_properties(self, values):
        which = quartile_assignments(np.array(values))
        counts = np.bincount(which, minlength=4)
        assert counts.sum() == len(values)
        assert counts.max() - counts.min() <= 1

    def test_ties_keep_date_order(self):
        which = quartile_assignments(np.array([5.0, 5.0, 5.0, 5.0]))
        assert list(which) == [0, 1, 2, 3]

    def test_too_few_observations(self):
        with pytest.raises(DataError):
            quartile_assignments(np.array([1.0, 2.0, 3.0]))

    def test_constant_error_in_every_quartile(self):
        actuals = np.linspace(1.0, 2.0, 12)
        run = make_run(actuals + 0.05, actuals)
        result = quartile_metrics(run)
        for name in ("Q1", "Q2", "Q3", "Q4"):
            assert result.segments[name].mae == pytest.approx(0.05)
            assert result.segments[name].rmse == pytest.approx(0.05)
            assert result.segments[name].count == 3

    def test_quartile_metrics_hand_case(self):
        actuals = np.array([10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0])
        errors = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
        run = make_run(actuals + errors, actuals)
        result = quartile_metrics(run)
        assert result.variant == "lstm"
        assert result.segments["full"].count == 8
        assert result.segments["Q1"].mae == pytest.approx(1.5)
        assert result.segments["Q4"].mae == pytest.approx(7.5)
        assert result.segments["Q4"].rmse == pytest.approx(math.sqrt((49 + 64) / 2))


class TestDirectionalAccuracy:
    def test_perfect_forecast(self):
        rng = np.random.default_rng(0)
        actuals = np.abs(np.cumsum(rng.normal(0, 0.1, 40))) + 1.0
        run = make_run(actuals, actuals)
        for horizon in (1, 5, 22):
            assert directional_accuracy(run, horizon) == 100.0

    def test_reflected_forecast_scores_zero(self):
        actuals = 10.0 + np.tile([1.0, -1.0], 15).cumsum() * 0.5
        preds = np.empty_like(actuals)
        preds[0] = actuals[0]
        preds[1:] = 2.0 * actuals[:-1] - actuals[1:]
        run = make_run(preds, actuals)
        assert directional_accuracy(run, 1) == 0.0

    def test_zero_moves_must_match(self):
        flat = np.full(10, 3.0)
        assert directional_accuracy(make_run(flat, flat), 1) == 100.0
        assert directional_accuracy(make_run(flat + 1.0, flat), 1) == 0.0

    def test_insufficient_length(self):
        run = make_run(np.ones(5), np.ones(5))
        with pytest.raises(DataError):
            directional_accuracy(run, 5)
        with pytest.raises(DataError):
            directional_accuracy(run, 0)


class TestImprovement:
    def test_no_change_is_zero(self):
        x = report("a", full=(2.0, 3.0, 10), Q1=(1.0, 1.5, 5))
        result = improvement(x, report("b", full=(2.0, 3.0, 10), Q1=(1.0, 1.5, 5)))
        assert result.segments["full"] == {"mae": 0.0, "rmse": 0.0}
        assert result.segments["Q1"] == {"mae": 0.0, "rmse": 0.0}

    def test_halving_is_fifty_percent(self):
        base = report("a", full=(2.0, 2.0, 10))
        challenger = report("b", full=(1.0, 1.0, 10))
        assert improvement(base, challenger).segments["full"]["mae"] == 50.0

    def test_reference_arithmetic(self):
        base = report("a", full=(1.56e-3, 2.39e-3, 100))
        challenger = report("b", full=(1.02e-3, 1.29e-3, 100))
        result = improvement(base, challenger)
        assert result.segments["full"]["mae"] == pytest.approx(34.615, abs=0.01)
        assert result.segments["full"]["rmse"] == pytest.approx(46.025, abs=0.01)

    def test_degradation_is_negative(self):
        base = report("a", full=(1.0, 1.0, 10))
        worse = report("b", full=(2.0, 2.0, 10))
        assert improvement(base, worse).segments["full"]["mae"] == -100.0

    def test_zero_base_rejected(self):
        base = report("a", full=(0.0, 0.0, 10))
        with pytest.raises(DataError):
            improvement(base, report("b", full=(1.0, 1.0, 10)))

    def test_segment_mismatch_rejected(self):
        base = report("a", full=(1.0, 1.0, 10))
        challenger = report("b", full=(1.0, 1.0, 10), Q1=(1.0, 1.0, 5))
        with pytest.raises(DataError):
            improvement(base, challenger)


class TestReportInvariants:
    def test_rmse_below_mae_rejected(self):
        with pytest.raises(DataError):
            report("a", full=(2.0, 1.0, 10))

    def test_quartile_counts_must_sum(self):
        with pytest.raises(DataError):
            report(
                "a",
                full=(1.0, 1.0, 10),
                Q1=(1.0, 1.0, 2),
                Q2=(1.0, 1.0, 2),
                Q3=(1.0, 1.0, 2),
                Q4=(1.0, 1.0, 2),
            )

    def test_unbalanced_quartiles_rejected(self):
        with pytest.raises(DataError):
            report(
                "a",
                full=(1.0, 1.0, 10),
                Q1=(1.0, 1.0, 4),
                Q2=(1.0, 1.0, 2),
                Q3=(1.0, 1.0, 2),
                Q4=(1.0, 1.0, 2),
            )


class TestTables:
    def test_metric_rows_cover_all_segments(self):
        actuals = np.linspace(1.0, 2.0, 12)
        reports = [
            quartile_metrics(make_run(actuals + 0.05, actuals)),
            quartile_metrics(
                make_run(actuals + 0.1, actuals, variant=ModelVariant.GARCH)
            ),
        ]
        header, rows = metric_table(reports)
        assert header == ("variant", "segment", "mae", "rmse", "count")
        assert len(rows) == 10
        assert {r[0] for r in rows} == {"lstm", "garch"}

    def test_format_table_alignment(self):
        header, rows = metric_table(
            [quartile_metrics(make_run(np.ones(8) * 1.05, np.linspace(1, 2, 8)))]
        )
        text = format_table(header, rows)
        lines = text.splitlines()
        assert lines[0].startswith("variant")
        assert set(lines[1]) <= {"-", " "}
        assert len(lines) == 2 + len(rows)
        # the rule row pins the column grid; data rows stay within it
        rule_cols = [i for i, ch in enumerate(lines[1]) if ch == " "]
        for line in lines[2:]:
            assert all(i >= len(line) or line[i] == " " for i in rule_cols)
        assert "Q4" in text

    def test_csv_roundtrip(self, tmp_path):
        actuals = np.linspace(1.0, 2.0, 8)
        rep = quartile_metrics(make_run(actuals + 0.05, actuals))
        header, rows = metric_table([rep])
        path = tmp_path / "metrics.csv"
        write_csv_table(path, header, rows)
        import csv as csv_mod

        with open(path, newline="") as fh:
            rows_back = list(csv_mod.DictReader(fh))
        assert len(rows_back) == len(rows)
        assert float(rows_back[0]["mae"]) == rep.segments["full"].mae

    def test_comparison_and_improvement_rows(self):
        result = mann_whitney_u([1.0, 2.0], [3.0, 4.0])
        header, rows = comparison_table({"a vs b": result})
        assert rows[0][0] == "a vs b"
        assert rows[0][1] == 0.0
        imp = improvement(
            report("a", full=(2.0, 2.0, 4)), report("b", full=(1.0, 1.0, 4))
        )
        header, rows = improvement_table(imp)
        assert rows[0] == ("a", "b", "full", 50.0, 50.0)
