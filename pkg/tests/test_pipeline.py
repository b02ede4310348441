import numpy as np
import pytest

from volcast.errors import DataError, NumericError
from volcast.garch import fit as garch_fit, forecast_one_step
from volcast.neural import NetworkConfig
from volcast.pipeline import (
    VARIANT_FEATURES,
    FeatureTable,
    ModelVariant,
    WalkForwardConfig,
    WalkForwardRun,
    build_features,
    garch_forecast_series,
    make_sequences,
    read_run_csv,
    run_all,
    walk_forward,
    write_run_csv,
)
from volcast.timeseries import (
    PriceSeries,
    ReturnSeries,
    log_returns,
    rolling_volatility,
)


def weekday_dates(n, start="2005-01-03"):
    d = np.datetime64(start, "D") + np.arange(2 * n + 10)
    dow = (d.view("int64") - 4) % 7
    return d[dow < 5][:n]


def clustered_prices(n, seed=0, start="2005-01-03"):
    """Prices whose returns show volatility clustering."""
    rng = np.random.default_rng(seed)
    sig = np.empty(n)
    eps = np.empty(n)
    sig[0] = 0.01
    for t in range(n):
        if t > 0:
            sig[t] = np.sqrt(1e-6 + 0.08 * eps[t - 1] ** 2 + 0.88 * sig[t - 1] ** 2)
        eps[t] = sig[t] * rng.standard_normal()
    return PriceSeries(weekday_dates(n, start), 100.0 * np.exp(np.cumsum(eps)))


def synthetic_vix(prices, seed=1):
    rng = np.random.default_rng(seed)
    return PriceSeries(prices.dates, np.abs(rng.normal(20.0, 5.0, len(prices))))


def tiny_net(features, hidden=8, epochs=3):
    return NetworkConfig(
        input_size=features,
        hidden_sizes=(hidden,),
        activations=("tanh",),
        dropout=(0.0,),
        recurrent_dropout=0.0,
        epochs=epochs,
        batch_size=32,
        patience=epochs,
    )


SMALL_WF = WalkForwardConfig(
    initial_train=200, initial_val=60, refit_stride=50, garch_refit_stride=25
)


class TestBuildFeatures:
    def test_column_count_per_variant(self):
        prices = clustered_prices(160)
        table = build_features(ModelVariant.LSTM, prices)
        assert table.feature_names == ("returns", "lagged_volatility")
        assert table.features.shape[1] == 2

    def test_vix_variant_has_four_columns(self):
        prices = clustered_prices(400)
        returns = log_returns(prices)
        forecasts = garch_forecast_series(returns, min_history=100, refit_stride=100)
        table = build_features(
            ModelVariant.LSTM_GARCH_VIX,
            prices,
            vix=synthetic_vix(prices),
            garch_forecasts=forecasts,
        )
        assert table.feature_names == VARIANT_FEATURES[ModelVariant.LSTM_GARCH_VIX]
        assert table.features.shape == (len(table), 4)

    def test_missing_vix_fails_fast(self):
        prices = clustered_prices(400)
        forecasts = garch_forecast_series(
            log_returns(prices), min_history=100, refit_stride=100
        )
        with pytest.raises(DataError, match="VIX"):
            build_features(
                ModelVariant.LSTM_GARCH_VIX, prices, garch_forecasts=forecasts
            )

    def test_missing_garch_forecasts_fail_fast(self):
        prices = clustered_prices(160)
        with pytest.raises(DataError, match="GARCH"):
            build_features(ModelVariant.LSTM_GARCH, prices)

    def test_unknown_return_kind(self):
        with pytest.raises(DataError):
            build_features(ModelVariant.LSTM, clustered_prices(160), return_kind="x")

    def test_row_loss_from_derivation(self):
        # one row to the return, 21 more to the volatility window, one to the lag
        prices = clustered_prices(160)
        table = build_features(ModelVariant.LSTM, prices, vol_window=22)
        assert len(table) == 160 - 23
        garch_only = build_features(ModelVariant.GARCH, prices, vol_window=22)
        assert len(garch_only) == 160 - 22

    def test_lagged_volatility_is_previous_day(self):
        prices = clustered_prices(160)
        table = build_features(ModelVariant.LSTM, prices)
        vol = rolling_volatility(log_returns(prices), window=22)
        for row in (0, 5, len(table) - 1):
            where = np.searchsorted(vol.dates, table.dates[row])
            assert table.features[row, 1] == vol.values[where - 1]
            assert table.target[row] == vol.values[where]

    def test_returns_column_matches_return_series(self):
        prices = clustered_prices(160)
        table = build_features(ModelVariant.LSTM, prices)
        returns = log_returns(prices)
        where = np.searchsorted(returns.dates, table.dates)
        assert np.array_equal(table.features[:, 0], returns.values[where])

    def test_inner_join_drops_unmatched_dates(self):
        prices = clustered_prices(400)
        vix = synthetic_vix(prices)
        holes = PriceSeries(
            np.delete(vix.dates, [150, 200]), np.delete(vix.close, [150, 200])
        )
        forecasts = garch_forecast_series(
            log_returns(prices), min_history=100, refit_stride=100
        )
        full = build_features(
            ModelVariant.LSTM_GARCH_VIX, prices, vix=vix, garch_forecasts=forecasts
        )
        trimmed = build_features(
            ModelVariant.LSTM_GARCH_VIX, prices, vix=holes, garch_forecasts=forecasts
        )
        assert len(trimmed) == len(full) - 2
        assert not np.isin(vix.dates[[150, 200]], trimmed.dates).any()

    def test_disjoint_dates_raise(self):
        prices = clustered_prices(160)
        far_future = PriceSeries(
            weekday_dates(160, start="2050-01-03"), synthetic_vix(prices).close
        )
        forecasts = garch_forecast_series(
            log_returns(prices), min_history=100, refit_stride=100
        )
        with pytest.raises(DataError, match="no dates"):
            build_features(
                ModelVariant.LSTM_GARCH_VIX,
                prices,
                vix=far_future,
                garch_forecasts=forecasts,
            )


class TestFeatureTable:
    def test_shape_mismatch_rejected(self):
        dates = weekday_dates(5)
        with pytest.raises(DataError):
            FeatureTable(dates, np.zeros((5, 2)), ("a",), np.zeros(5))
        with pytest.raises(DataError):
            FeatureTable(dates, np.zeros((5, 1)), ("a",), np.zeros(4))

    def test_restrict_keeps_matching_rows(self):
        prices = clustered_prices(160)
        table = build_features(ModelVariant.LSTM, prices)
        kept = table.restrict(table.dates[10:20])
        assert len(kept) == 10
        assert np.array_equal(kept.features, table.features[10:20])
        assert np.array_equal(kept.target, table.target[10:20])


class TestMakeSequences:
    def test_alignment_oracle(self):
        prices = clustered_prices(80)
        table = build_features(ModelVariant.LSTM, prices)
        ds = make_sequences(table, lookback=7)
        assert len(ds) == len(table) - 7
        for i in (0, 3, len(ds) - 1):
            assert np.array_equal(ds.sequences[i], table.features[i : i + 7])
            assert ds.targets[i] == table.target[i + 7]
            assert ds.dates[i] == table.dates[i + 7]

    def test_shapes(self):
        table = build_features(ModelVariant.LSTM, clustered_prices(80))
        ds = make_sequences(table, lookback=5)
        assert ds.sequences.shape == (len(table) - 5, 5, 2)
        assert ds.sequences.flags["C_CONTIGUOUS"]

    def test_too_short_table(self):
        table = build_features(ModelVariant.LSTM, clustered_prices(40))
        with pytest.raises(DataError):
            make_sequences(table, lookback=len(table))

    def test_bad_lookback(self):
        table = build_features(ModelVariant.LSTM, clustered_prices(40))
        with pytest.raises(DataError):
            make_sequences(table, lookback=0)


class TestWalkForwardConfig:
    def test_defaults_match_reference_protocol(self):
        wf = WalkForwardConfig()
        assert (wf.initial_train, wf.initial_val, wf.refit_stride) == (3024, 756, 252)
        assert wf.first_test_row == 3780

    def test_rejects_bad_values(self):
        with pytest.raises(DataError):
            WalkForwardConfig(initial_train=0)
        with pytest.raises(DataError):
            WalkForwardConfig(horizon=2)
        with pytest.raises(DataError):
            WalkForwardConfig(garch_refit_stride=0)
        with pytest.raises(DataError):
            WalkForwardConfig(garch_order=(0, 0))

    def test_reference_window_arithmetic(self):
        # a 6032-row price file loses 23 derivation rows, leaving 6009;
        # testing starts after 3024 + 756 of them and covers the rest
        table_rows = 6032 - 23
        wf = WalkForwardConfig()
        predictions = table_rows - wf.first_test_row
        refits = -(-predictions // wf.refit_stride)
        assert table_rows == 6009
        assert predictions == 2229
        assert refits == 9


class TestWalkForwardLstm:
    def test_boundary_single_prediction(self):
        wf = WalkForwardConfig(initial_train=120, initial_val=40, refit_stride=50)
        prices = clustered_prices(161 + 23)
        table = build_features(ModelVariant.LSTM, prices)
        assert len(table) == 161
        run = walk_forward(
            ModelVariant.LSTM, table, wf=wf, net_config=tiny_net(2, epochs=2), lookback=8
        )
        assert len(run) == 1
        assert len(run.windows) == 1
        assert run.dates[0] == table.dates[160]
        assert run.windows[0].truncated

    def test_too_few_rows(self):
        wf = WalkForwardConfig(initial_train=120, initial_val=40)
        table = build_features(ModelVariant.LSTM, clustered_prices(160 + 23))
        with pytest.raises(DataError, match="161"):
            walk_forward(ModelVariant.LSTM, table, wf=wf, net_config=tiny_net(2))

    def test_window_layout(self):
        table = build_features(ModelVariant.LSTM, clustered_prices(420))
        run = walk_forward(
            ModelVariant.LSTM,
            table,
            wf=SMALL_WF,
            net_config=tiny_net(2, epochs=2),
            lookback=10,
        )
        predictions = len(table) - SMALL_WF.first_test_row
        assert len(run) == predictions
        assert len(run.windows) == -(-predictions // SMALL_WF.refit_stride)
        assert np.array_equal(np.unique(run.window_index), np.arange(len(run.windows)))
        # each full window covers refit_stride rows; training expands by it
        assert run.windows[0].train_rows == 200
        assert run.windows[1].train_rows == 250
        counts = np.bincount(run.window_index)
        assert counts[0] == SMALL_WF.refit_stride
        assert counts[-1] == predictions - 50 * (len(run.windows) - 1)

    def test_deterministic_given_seed(self):
        table = build_features(ModelVariant.LSTM, clustered_prices(300))
        wf = WalkForwardConfig(initial_train=150, initial_val=50, refit_stride=60)
        runs = [
            walk_forward(
                ModelVariant.LSTM,
                table,
                wf=wf,
                net_config=tiny_net(2, epochs=2),
                lookback=6,
                seed=9,
            )
            for _ in range(2)
        ]
        assert np.array_equal(runs[0].predictions, runs[1].predictions)

    def test_seed_changes_predictions(self):
        table = build_features(ModelVariant.LSTM, clustered_prices(300))
        wf = WalkForwardConfig(initial_train=150, initial_val=50, refit_stride=60)
        a = walk_forward(
            ModelVariant.LSTM, table, wf=wf, net_config=tiny_net(2, epochs=2), lookback=6, seed=0
        )
        b = walk_forward(
            ModelVariant.LSTM, table, wf=wf, net_config=tiny_net(2, epochs=2), lookback=6, seed=1
        )
        assert not np.array_equal(a.predictions, b.predictions)

    def test_scalers_never_see_validation_or_test_rows(self):
        prices = clustered_prices(300)
        table = build_features(ModelVariant.LSTM, prices)
        wf = WalkForwardConfig(initial_train=150, initial_val=50, refit_stride=60)
        spiked = FeatureTable(
            dates=table.dates,
            features=table.features.copy(),
            feature_names=table.feature_names,
            target=table.target,
        )
        first_train_end = wf.first_test_row - wf.initial_val
        spiked.features[first_train_end + 5, 0] = 1e6  # validation region of window 0
        run = walk_forward(
            ModelVariant.LSTM, spiked, wf=wf, net_config=tiny_net(2, epochs=2), lookback=6
        )
        assert run.windows[0].feature_scaler.x_max[0] < 1e5
        # by window 1 the spike has entered the training block
        assert run.windows[1].feature_scaler.x_max[0] == 1e6

    def test_last_close_cannot_leak_backwards(self):
        prices = clustered_prices(300)
        wf = WalkForwardConfig(initial_train=150, initial_val=50, refit_stride=60)
        cfg = tiny_net(2, epochs=2)
        base = walk_forward(
            ModelVariant.LSTM, build_features(ModelVariant.LSTM, prices), wf=wf,
            net_config=cfg, lookback=6,
        )
        bumped_close = prices.close.copy()
        bumped_close[-1] *= 1.5
        bumped = walk_forward(
            ModelVariant.LSTM,
            build_features(ModelVariant.LSTM, PriceSeries(prices.dates, bumped_close)),
            wf=wf, net_config=cfg, lookback=6,
        )
        assert np.array_equal(base.predictions, bumped.predictions)
        assert base.actuals[-1] != bumped.actuals[-1]
        assert np.array_equal(base.actuals[:-1], bumped.actuals[:-1])

    def test_input_size_follows_table_width(self):
        table = build_features(ModelVariant.LSTM, clustered_prices(250))
        wf = WalkForwardConfig(initial_train=120, initial_val=40, refit_stride=80)
        misdeclared = tiny_net(7, epochs=2)
        run = walk_forward(
            ModelVariant.LSTM, table, wf=wf, net_config=misdeclared, lookback=6
        )
        assert len(run) == len(table) - wf.first_test_row

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_numeric_failure_names_window(self):
        prices = clustered_prices(300)
        table = build_features(ModelVariant.LSTM, prices)
        broken = FeatureTable(
            dates=table.dates,
            features=table.features,
            feature_names=table.feature_names,
            target=np.where(np.arange(len(table)) == 10, np.inf, table.target),
        )
        wf = WalkForwardConfig(initial_train=150, initial_val=50, refit_stride=60)
        with pytest.raises(NumericError, match="window 0"):
            walk_forward(
                ModelVariant.LSTM, broken, wf=wf, net_config=tiny_net(2, epochs=2), lookback=6
            )

    def test_lookback_must_fit_training_block(self):
        table = build_features(ModelVariant.LSTM, clustered_prices(300))
        wf = WalkForwardConfig(initial_train=150, initial_val=50, refit_stride=60)
        with pytest.raises(DataError, match="lookback"):
            walk_forward(
                ModelVariant.LSTM, table, wf=wf, net_config=tiny_net(2), lookback=150
            )


class TestWalkForwardGarch:
    def test_predictions_match_expanding_refit_oracle(self):
        prices = clustered_prices(300)
        table = build_features(ModelVariant.GARCH, prices)
        wf = WalkForwardConfig(
            initial_train=150, initial_val=50, refit_stride=60, garch_refit_stride=30
        )
        run = walk_forward(ModelVariant.GARCH, table, wf=wf)
        returns_all = table.features[:, 0]
        fitted = None
        for j in (0, 1, 30):
            t = wf.first_test_row + j
            history = ReturnSeries(table.dates[:t], returns_all[:t], "log")
            if j % 30 == 0:
                warm = (fitted.params,) if fitted is not None else ()
                fitted = garch_fit(
                    history, 1, 1, restarts=0 if warm else 2, warm_starts=warm
                )
            assert run.predictions[j] == forecast_one_step(fitted, history)

    def test_window_index_follows_garch_stride(self):
        table = build_features(ModelVariant.GARCH, clustered_prices(300))
        wf = WalkForwardConfig(
            initial_train=150, initial_val=50, refit_stride=60, garch_refit_stride=25
        )
        run = walk_forward(ModelVariant.GARCH, table, wf=wf)
        assert np.array_equal(run.window_index, np.arange(len(run)) // 25)
        assert len(run.windows) == -(-len(run) // 25)
        assert all(w.converged is not None for w in run.windows)

    def test_positive_volatility(self):
        table = build_features(ModelVariant.GARCH, clustered_prices(300))
        wf = WalkForwardConfig(
            initial_train=150, initial_val=50, refit_stride=60, garch_refit_stride=50
        )
        run = walk_forward(ModelVariant.GARCH, table, wf=wf)
        assert np.all(run.predictions > 0)


class TestGarchForecastSeries:
    def test_dates_start_after_min_history(self):
        returns = log_returns(clustered_prices(300))
        series = garch_forecast_series(returns, min_history=120, refit_stride=60)
        assert len(series) == len(returns) - 120
        assert series.dates[0] == returns.dates[120]

    def test_forecast_ignores_later_returns(self):
        returns = log_returns(clustered_prices(300))
        series = garch_forecast_series(returns, min_history=250, refit_stride=200)
        tampered = ReturnSeries(
            returns.dates,
            np.where(np.arange(len(returns)) >= 260, 0.05, returns.values),
            returns.kind,
        )
        again = garch_forecast_series(tampered, min_history=250, refit_stride=200)
        assert np.array_equal(series.values[:10], again.values[:10])
        assert not np.array_equal(series.values[10:], again.values[10:])

    def test_short_series_rejected(self):
        returns = log_returns(clustered_prices(80))
        with pytest.raises(DataError):
            garch_forecast_series(returns, min_history=100)


class TestRunAll:
    def test_common_dates_across_variants(self):
        prices = clustered_prices(420)
        result = run_all(
            [ModelVariant.GARCH, ModelVariant.LSTM],
            prices,
            wf=SMALL_WF,
            net_config=tiny_net(2, epochs=2),
            lookback=10,
        )
        assert not result.errors
        a = result.runs[ModelVariant.GARCH]
        b = result.runs[ModelVariant.LSTM]
        assert np.array_equal(a.dates, b.dates)
        assert np.array_equal(a.actuals, b.actuals)

    def test_errors_are_contained(self):
        prices = clustered_prices(420)
        result = run_all(
            [ModelVariant.LSTM, ModelVariant.LSTM_GARCH_VIX],
            prices,
            wf=SMALL_WF,
            net_config=tiny_net(2, epochs=2),
            lookback=10,
            garch_feature_min_history=100,
        )
        assert ModelVariant.LSTM in result.runs
        assert isinstance(result.errors[ModelVariant.LSTM_GARCH_VIX], DataError)

    def test_deterministic(self):
        prices = clustered_prices(420)
        kwargs = dict(wf=SMALL_WF, net_config=tiny_net(2, epochs=2), lookback=10, seed=4)
        first = run_all([ModelVariant.LSTM], prices, **kwargs)
        second = run_all([ModelVariant.LSTM], prices, **kwargs)
        assert np.array_equal(
            first.runs[ModelVariant.LSTM].predictions,
            second.runs[ModelVariant.LSTM].predictions,
        )


class TestRunInvariants:
    def test_negative_prediction_rejected(self):
        dates = weekday_dates(3)
        with pytest.raises(DataError, match="negative"):
            WalkForwardRun(
                variant=ModelVariant.LSTM,
                dates=dates,
                predictions=np.array([0.1, -0.2, 0.3]),
                actuals=np.ones(3),
                window_index=np.zeros(3, dtype=np.int64),
                seed=0,
                lookback=5,
                windows=(),
            )

    def test_length_mismatch_rejected(self):
        dates = weekday_dates(3)
        with pytest.raises(DataError):
            WalkForwardRun(
                variant=ModelVariant.LSTM,
                dates=dates,
                predictions=np.ones(2),
                actuals=np.ones(3),
                window_index=np.zeros(3, dtype=np.int64),
                seed=0,
                lookback=5,
                windows=(),
            )


class TestRunCsv:
    def test_roundtrip_is_exact(self, tmp_path):
        table = build_features(ModelVariant.GARCH, clustered_prices(300))
        wf = WalkForwardConfig(
            initial_train=150, initial_val=50, refit_stride=60, garch_refit_stride=50
        )
        run = walk_forward(ModelVariant.GARCH, table, wf=wf)
        path = tmp_path / "run.csv"
        write_run_csv(run, path)
        dates, actuals, predictions, window_index = read_run_csv(path)
        assert np.array_equal(dates, run.dates)
        assert np.array_equal(actuals, run.actuals)
        assert np.array_equal(predictions, run.predictions)
        assert np.array_equal(window_index, run.window_index)

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("date,prediction\n2020-01-01,0.5\n")
        with pytest.raises(DataError, match="columns"):
            read_run_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("date,actual,prediction,window_index\n")
        with pytest.raises(DataError, match="no prediction rows"):
            read_run_csv(path)
