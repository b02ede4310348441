import math
import re

import numpy as np
import pytest

from volcast.errors import DataError, NumericError
from volcast.explain import (
    ExplainerConfig,
    Explanation,
    FeatureBins,
    bin_index,
    discretize_stats,
    explain_instance,
    explanation_rows,
    fit_surrogate,
    flatten,
    format_explanation,
    kernel,
    perturb,
    unflatten,
)

NAMES = ("returns", "lagged_volatility", "garch_forecast", "vix_close")


def training_windows(n=64, lookback=6, width=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, lookback, width))


class TestFlatten:
    def test_size_and_naming(self):
        window = np.zeros((22, 4))
        flat, names = flatten(window, NAMES)
        assert flat.shape == (88,)
        assert len(names) == 88
        assert names[0] == "t0 returns"
        assert names[-1] == "t21 vix_close"
        assert names[21 * 4 + 1] == "t21 lagged_volatility"

    def test_round_trip(self):
        window = np.arange(12.0).reshape(4, 3)
        flat, _ = flatten(window)
        assert np.array_equal(unflatten(flat, 4, 3), window)

    def test_empty_window_rejected(self):
        with pytest.raises(DataError):
            flatten(np.zeros((0, 3)))

    def test_name_mismatch_rejected(self):
        with pytest.raises(DataError):
            flatten(np.zeros((2, 3)), ("a", "b"))

    def test_unflatten_size_check(self):
        with pytest.raises(DataError):
            unflatten(np.zeros(7), 2, 3)


class TestDiscretize:
    def test_quartile_arithmetic(self):
        windows = np.arange(1.0, 9.0).reshape(8, 1, 1)
        bins = discretize_stats(windows)
        assert bins.boundaries[0] == pytest.approx([2.75, 4.5, 6.25])
        assert bins.minimum[0] == 1.0 and bins.maximum[0] == 8.0
        assert not bins.uninformative[0]

    def test_constant_feature_is_uninformative(self):
        windows = training_windows(16, 3, 2)
        windows[:, :, 1] = 7.0
        bins = discretize_stats(windows)
        flagged = bins.uninformative.reshape(3, 2)
        assert flagged[:, 1].all()
        assert not flagged[:, 0].any()
        constant = np.flatnonzero(bins.uninformative)[0]
        assert bins.boundaries[constant, 0] == bins.boundaries[constant, 2] == 7.0

    def test_naming_matches_flatten(self):
        windows = training_windows(8, 5, 4)
        bins = discretize_stats(windows, NAMES)
        _, names = flatten(windows[0], NAMES)
        assert bins.names == names

    def test_flat_matrix_input(self):
        flat = np.arange(1.0, 9.0)[:, None]
        bins = discretize_stats(flat, ("cell",))
        assert bins.names == ("cell",)
        assert bins.boundaries[0] == pytest.approx([2.75, 4.5, 6.25])

    def test_too_few_windows(self):
        with pytest.raises(DataError):
            discretize_stats(training_windows(3, 2, 2))


class TestBinIndex:
    def test_boundary_ties_go_low(self):
        bins = FeatureBins(
            names=("x",),
            boundaries=np.array([[1.0, 2.0, 3.0]]),
            minimum=np.array([0.0]),
            maximum=np.array([4.0]),
            uninformative=np.array([False]),
        )
        cases = {0.5: 0, 1.0: 0, 1.5: 1, 2.0: 1, 2.5: 2, 3.0: 2, 3.5: 3}
        for value, expected in cases.items():
            assert bin_index(np.array([value]), bins)[0] == expected


class TestPerturb:
    def setup_method(self):
        self.bins = discretize_stats(training_windows(128, 2, 2, seed=3))
        self.x = training_windows(1, 2, 2, seed=9).reshape(-1)

    def test_single_sample_is_instance(self):
        values, binary = perturb(self.x, self.bins, 1)
        assert np.array_equal(values[0], self.x)
        assert np.array_equal(binary, np.ones((1, 4)))

    def test_row_zero_always_instance(self):
        values, binary = perturb(self.x, self.bins, 50, seed=4)
        assert np.array_equal(values[0], self.x)
        assert np.array_equal(binary[0], np.ones(4))

    def test_deterministic(self):
        a = perturb(self.x, self.bins, 200, seed=11)
        b = perturb(self.x, self.bins, 200, seed=11)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])

    def test_match_rate_near_quarter(self):
        _, binary = perturb(self.x, self.bins, 10000, seed=0)
        rates = binary[1:].mean(axis=0)
        assert np.all(np.abs(rates - 0.25) < 0.02)

    def test_matching_keeps_value_others_resample_in_range(self):
        values, binary = perturb(self.x, self.bins, 500, seed=2)
        kept = binary == 1.0
        for j in range(4):
            assert np.all(values[kept[:, j], j] == self.x[j])
            moved = values[~kept[:, j], j]
            assert np.all(moved >= self.bins.minimum[j])
            assert np.all(moved <= self.bins.maximum[j])

    def test_constant_feature_untouched(self):
        windows = training_windows(64, 2, 2, seed=5)
        windows[:, :, 0] = 3.0
        bins = discretize_stats(windows)
        x = windows[0].reshape(-1)
        values, binary = perturb(x, bins, 300, seed=1)
        constant_cols = np.flatnonzero(bins.uninformative)
        assert np.all(values[:, constant_cols] == 3.0)
        assert np.all(binary[:, constant_cols] == 1.0)

    def test_zero_samples_rejected(self):
        with pytest.raises(DataError):
            perturb(self.x, self.bins, 0)


class TestKernel:
    def test_anchor_values(self):
        assert kernel(0.0, 2.0) == 1.0
        assert kernel(2.0, 2.0) == pytest.approx(math.exp(-1.0))

    def test_strictly_decreasing(self):
        d = np.linspace(0.0, 5.0, 30)
        w = kernel(d, 1.5)
        assert np.all(np.diff(w) < 0)

    def test_invalid_inputs(self):
        with pytest.raises(DataError):
            kernel(-0.1, 1.0)
        with pytest.raises(DataError):
            kernel(1.0, 0.0)


class TestFitSurrogate:
    def test_recovers_linear_target(self):
        rng = np.random.default_rng(0)
        x = rng.integers(0, 2, (20000, 5)).astype(float)
        beta = np.array([2.0, -1.0, 0.5, 3.0, -2.5])
        y = 0.7 + x @ beta
        model = fit_surrogate(x, y, np.ones(len(y)), num_features=5)
        assert model.coefficients == pytest.approx(beta, abs=1e-6)
        assert model.intercept == pytest.approx(0.7, abs=1e-6)
        assert model.r_squared == pytest.approx(1.0, abs=1e-9)

    def test_three_point_weighted_hand_solution(self):
        x = np.array([[0.0], [1.0], [2.0]])
        y = np.array([1.0, 2.0, 4.0])
        w = np.array([1.0, 2.0, 1.0])
        model = fit_surrogate(x, y, w, num_features=1, penalty=0.0)
        assert model.coefficients[0] == pytest.approx(1.5)
        assert model.intercept == pytest.approx(0.75)
        assert model.r_squared == pytest.approx(1.0 - 0.25 / 4.75)

    def test_top_k_keeps_largest(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 2, (4000, 5)).astype(float)
        y = x @ np.array([5.0, 4.0, 0.1, 0.1, 0.1])
        model = fit_surrogate(x, y, np.ones(len(y)), num_features=2)
        assert list(model.indices) == [0, 1]

    def test_constant_output_gives_exact_zeros(self):
        rng = np.random.default_rng(2)
        x = rng.integers(0, 2, (50, 3)).astype(float)
        model = fit_surrogate(x, np.full(50, 4.2), np.ones(50), num_features=3)
        assert np.array_equal(model.coefficients, np.zeros(3))
        assert model.intercept == pytest.approx(4.2)
        assert model.r_squared == 1.0

    def test_input_validation(self):
        x = np.ones((5, 2))
        with pytest.raises(DataError):
            fit_surrogate(x, np.ones(4), np.ones(5), num_features=1)
        with pytest.raises(DataError):
            fit_surrogate(x, np.ones(5), np.ones(5), num_features=3)
        with pytest.raises(DataError):
            fit_surrogate(x, np.ones(5), np.zeros(5), num_features=1)


class TestExplainerConfig:
    def test_bounds(self):
        with pytest.raises(DataError):
            ExplainerConfig(num_samples=5)
        with pytest.raises(DataError):
            ExplainerConfig(num_features=0)
        with pytest.raises(DataError):
            ExplainerConfig(kernel_width=0.0)


class TestExplainInstance:
    def setup_method(self):
        self.windows = training_windows(128, 6, 3, seed=7)
        self.bins = discretize_stats(self.windows, ("a", "b", "c"))
        self.config = ExplainerConfig(num_samples=800, num_features=5, seed=0)

    def test_constant_black_box(self):
        x = self.windows[0]
        expl = explain_instance(lambda w: np.full(len(w), 3.3), x, self.bins, self.config)
        assert expl.predicted_value == 3.3
        assert expl.local_range == (3.3, 3.3)
        assert len(expl.conditions) == 5
        assert all(weight == 0.0 for _, weight in expl.conditions)

    def test_planted_cell_ranks_first(self):
        x = np.full((6, 3), 0.9)  # every cell in its top training quartile
        expl = explain_instance(lambda w: w[:, 2, 1], x, self.bins, self.config)
        condition, weight = expl.conditions[0]
        assert "t2 b" in condition
        assert weight > 0
        assert abs(weight) > 3 * abs(expl.conditions[1][1])

    def test_condition_strings_are_predicates(self):
        expl = explain_instance(
            lambda w: w[:, 0, 0], self.windows[3], self.bins, self.config
        )
        for condition, _ in expl.conditions:
            assert re.search(r"t\d+ [a-z]", condition)
            assert ("<" in condition) or ("=" in condition)

    def test_deterministic(self):
        model = lambda w: w[:, 1, 2] * 2.0 + w[:, 4, 0]
        a = explain_instance(model, self.windows[5], self.bins, self.config)
        b = explain_instance(model, self.windows[5], self.bins, self.config)
        assert a == b

    def test_local_fidelity_on_linear_model(self):
        # fidelity is highest where explanations matter: instances whose
        # driving cells sit in an outer quartile, so bin membership moves
        # the output well beyond the within-bin resampling noise
        model = lambda w: 3.0 * w[:, 1, 0] + 2.0 * w[:, 4, 2]
        x = np.full((6, 3), 0.95)
        expl = explain_instance(model, x, self.bins, self.config)
        assert expl.r_squared >= 0.5

    def test_predicted_value_matches_model(self):
        model = lambda w: w[:, 3, 1] ** 2
        x = self.windows[11]
        expl = explain_instance(model, x, self.bins, self.config)
        assert expl.predicted_value == model(x[None])[0]
        assert expl.local_range[0] <= expl.predicted_value <= expl.local_range[1]

    def test_model_failure_reports_sample(self):
        def fragile(w):
            if len(w) > 1:
                raise ValueError("boom")
            return np.zeros(1)

        with pytest.raises(NumericError, match="black-box model failed"):
            explain_instance(fragile, self.windows[0], self.bins, self.config)

    def test_non_finite_output_reports_sample(self):
        def leaky(w):
            out = w[:, 0, 0].copy()
            if len(w) > 3:
                out[3] = np.nan
            return out

        with pytest.raises(NumericError, match="perturbation 3"):
            explain_instance(leaky, self.windows[0], self.bins, self.config)

    def test_uninformative_features_pad_with_zero_weight(self):
        windows = training_windows(64, 2, 2, seed=4)
        windows[:, :, 1] = 1.5  # half the flattened features are constant
        bins = discretize_stats(windows, ("live", "flat"))
        config = ExplainerConfig(num_samples=200, num_features=4, seed=0)
        expl = explain_instance(lambda w: w[:, 0, 0], windows[0], bins, config)
        assert len(expl.conditions) == 4
        padded = [c for c, w in expl.conditions if "flat" in c]
        assert padded and all("=" in c for c in padded)
        weights = {c: w for c, w in expl.conditions}
        assert all(weights[c] == 0.0 for c in padded)

    def test_too_many_features_requested(self):
        config = ExplainerConfig(num_samples=100, num_features=99)
        with pytest.raises(DataError):
            explain_instance(lambda w: w[:, 0, 0], self.windows[0], self.bins, config)

    def test_wrong_window_shape(self):
        with pytest.raises(DataError):
            explain_instance(
                lambda w: w[:, 0, 0], np.zeros((3, 3)), self.bins, self.config
            )


class TestReport:
    def make(self):
        windows = training_windows(64, 3, 2, seed=8)
        bins = discretize_stats(windows, ("p", "q"))
        config = ExplainerConfig(num_samples=200, num_features=3, seed=1)
        return explain_instance(lambda w: w[:, 2, 0], windows[2], bins, config)

    def test_three_sections(self):
        text = format_explanation(self.make())
        assert text.index("Predicted value:") < text.index(
            "Negative and positive conditions:"
        ) < text.index("Feature values:")
        assert "local min" in text and "local max" in text

    def test_rows_rank_conditions(self):
        expl = self.make()
        header, rows = explanation_rows(expl)
        assert header == ("rank", "condition", "weight", "feature", "value")
        assert [r[0] for r in rows] == [1, 2, 3]
        assert rows[0][1] == expl.conditions[0][0]
        assert rows[0][2] == expl.conditions[0][1]


class TestExplanationInvariants:
    def test_non_finite_weight_rejected(self):
        with pytest.raises(DataError):
            Explanation(
                predicted_value=1.0,
                local_range=(0.0, 2.0),
                conditions=(("t0 x <= 1", float("nan")),),
                feature_values=(("t0 x", 0.5),),
                r_squared=1.0,
                intercept=0.0,
            )

    def test_inverted_range_rejected(self):
        with pytest.raises(DataError):
            Explanation(
                predicted_value=1.0,
                local_range=(2.0, 0.0),
                conditions=(),
                feature_values=(),
                r_squared=1.0,
                intercept=0.0,
            )
