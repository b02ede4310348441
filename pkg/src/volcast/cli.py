"""Command-line interface: artifact plumbing around the library modules.

Every command writes its outputs next to a flat key=value manifest that
echoes the resolved configuration, the seeds, and the input data hashes,
so a rerun with the same manifest inputs reproduces the outputs
byte-identically.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import scipy

from . import __version__
from . import evaluate as ev
from . import garch
from . import neural
from .config import ExperimentConfig, load_config
from .errors import DataError, NumericError
from .explain import (
    ExplainerConfig,
    discretize_stats,
    explain_instance,
    explanation_rows,
    format_explanation,
)
from .pipeline import (
    VARIANT_FEATURES,
    FeatureTable,
    ModelVariant,
    build_features,
    garch_forecast_series,
    make_sequences,
    read_run_csv,
    walk_forward,
    write_run_csv,
)
from .timeseries import PriceSeries, align_series, ingest_csv, log_returns, pct_change

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DIRECTIONAL_HORIZONS = (1, 5, 22)


class UsageError(Exception):
    """Bad flags or arguments; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); remap to 1
        raise UsageError(message)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, entries: dict) -> None:
    """Flat key = value file, sorted by key; no timestamps, no output paths."""
    lines = [f"{key} = {entries[key]}" for key in sorted(entries)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    entries = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition(" = ")
            entries[key] = value
    return entries


def _base_manifest(command: str, config: ExperimentConfig) -> dict:
    entries = dict(config.manifest_entries())
    entries["run.command"] = command
    entries["versions.volcast"] = __version__
    entries["versions.numpy"] = np.__version__
    entries["versions.scipy"] = scipy.__version__
    return entries


def _load_price(path, label: str):
    if not path:
        raise DataError(f"data.{label} is not configured")
    if not Path(path).exists():
        raise DataError(f"{label} file not found: {path}")
    return ingest_csv(path)


def _capped(series: PriceSeries, max_rows: int) -> PriceSeries:
    if max_rows and len(series) > max_rows:
        return PriceSeries(series.dates[:max_rows], series.close[:max_rows])
    return series


def _dataset(config: ExperimentConfig):
    """Load the configured inputs, keeping the earliest max_rows sessions."""
    sp500 = _capped(_load_price(config.sp500, "sp500").series, config.max_rows)
    vix = None
    if "vix_close" in VARIANT_FEATURES[config.variant]:
        vix = _capped(_load_price(config.vix, "vix").series, config.max_rows)
    return sp500, vix


def _returns(config: ExperimentConfig, sp500: PriceSeries):
    return log_returns(sp500) if config.return_kind == "log" else pct_change(sp500)


def _run_backtest(config: ExperimentConfig, sp500, vix, keep_networks=False):
    forecasts = None
    if "garch_forecast" in VARIANT_FEATURES[config.variant]:
        forecasts = garch_forecast_series(
            _returns(config, sp500),
            order=config.walkforward.garch_order,
            min_history=config.garch_min_history,
            refit_stride=config.walkforward.garch_refit_stride,
        )
    table = build_features(
        config.variant,
        sp500,
        vix=vix,
        garch_forecasts=forecasts,
        return_kind=config.return_kind,
    )
    net_config = None
    if config.variant is not ModelVariant.GARCH:
        net_config = config.network_config(len(table.feature_names))
    run = walk_forward(
        config.variant,
        table,
        wf=config.walkforward,
        net_config=net_config,
        lookback=config.lookback,
        seed=config.seed,
        keep_networks=keep_networks,
    )
    return run, table


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    if getattr(args, "sp500", None):
        overrides["data.sp500"] = args.sp500
    if getattr(args, "vix", None):
        overrides["data.vix"] = args.vix
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "garch_refit_stride", None) is not None:
        overrides["walkforward.garch_refit_stride"] = str(args.garch_refit_stride)
    return load_config(path=args.config, profile=args.profile, overrides=overrides)


def _write_price_csv(path, series: PriceSeries, label: str) -> None:
    lines = ["date,close"] + [
        f"{d},{float(c)!r}" for d, c in zip(series.dates, series.close)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_ingest(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    result = _load_price(config.sp500, "sp500")
    entries = _base_manifest("ingest", config)
    entries["input.sp500.sha256"] = _sha256(config.sp500)
    entries["ingest.sp500.rows"] = len(result.series)
    entries["ingest.sp500.skipped"] = len(result.skipped)
    skipped_total = len(result.skipped)
    _write_price_csv(out / "sp500.csv", result.series, "sp500")

    if config.vix:
        vix_result = _load_price(config.vix, "vix")
        entries["input.vix.sha256"] = _sha256(config.vix)
        entries["ingest.vix.rows"] = len(vix_result.series)
        entries["ingest.vix.skipped"] = len(vix_result.skipped)
        skipped_total += len(vix_result.skipped)
        _write_price_csv(out / "vix.csv", vix_result.series, "vix")
        joined_sp, joined_vix, dropped = align_series(result.series, vix_result.series)
        entries["ingest.join.dropped"] = dropped
        entries["ingest.join.rows"] = len(joined_sp)
        lines = ["date,sp500,vix"] + [
            f"{d},{float(s)!r},{float(v)!r}"
            for d, s, v in zip(joined_sp.dates, joined_sp.close, joined_vix.close)
        ]
        (out / "joined.csv").write_text("\n".join(lines) + "\n")

    if args.strict and skipped_total:
        raise DataError(f"{skipped_total} malformed row(s) rejected under --strict")
    write_manifest(out / "manifest.txt", entries)
    print(f"ingested {len(result.series)} rows ({skipped_total} skipped)")
    return EXIT_OK


def cmd_fit_garch(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    sp500, _ = _dataset(config)
    returns = _returns(config, sp500)
    adf = garch.adf_test(returns.values)
    fitted = garch.select_order(returns, seed=config.seed)
    (out / "garch.txt").write_text(garch.fit_to_text(fitted))
    header = ("p", "q", "loglik", "aic", "k", "converged", "n_obs")
    rows = [
        (
            fitted.order[0],
            fitted.order[1],
            fitted.loglik,
            fitted.aic,
            fitted.k,
            fitted.converged,
            fitted.n_obs,
        )
    ]
    ev.write_csv_table(out / "fit.csv", header, rows)
    adf_header = ("statistic", "lags", "rejects_1pct", "rejects_5pct")
    adf_rows = [(adf.statistic, adf.lags, adf.rejects("1%"), adf.rejects("5%"))]
    ev.write_csv_table(out / "adf.csv", adf_header, adf_rows)
    entries = _base_manifest("fit-garch", config)
    entries["input.sp500.sha256"] = _sha256(config.sp500)
    entries["fit.order"] = f"({fitted.order[0]},{fitted.order[1]})"
    entries["fit.aic"] = repr(fitted.aic)
    entries["fit.adf_statistic"] = repr(adf.statistic)
    write_manifest(out / "manifest.txt", entries)
    print(
        f"selected GARCH{fitted.order} aic={fitted.aic:.3f} "
        f"adf={adf.statistic:.2f} (rejects 1%: {adf.rejects('1%')})"
    )
    return EXIT_OK


def _write_windows_csv(path, run) -> None:
    header = (
        "index",
        "first_test_row",
        "test_rows",
        "train_rows",
        "epochs_run",
        "best_val_loss",
        "init_retries",
        "truncated",
        "converged",
    )
    rows = [
        (
            w.index,
            w.first_test_row,
            w.test_rows,
            w.train_rows,
            "" if w.epochs_run is None else w.epochs_run,
            "" if w.best_val_loss is None else repr(w.best_val_loss),
            w.init_retries,
            w.truncated,
            "" if w.converged is None else w.converged,
        )
        for w in run.windows
    ]
    ev.write_csv_table(path, header, rows)


def cmd_backtest(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    sp500, vix = _dataset(config)
    run, _ = _run_backtest(config, sp500, vix)
    write_run_csv(run, out / "run.csv")
    _write_windows_csv(out / "windows.csv", run)
    entries = _base_manifest("backtest", config)
    entries["input.sp500.sha256"] = _sha256(config.sp500)
    if vix is not None:
        entries["input.vix.sha256"] = _sha256(config.vix)
    entries["backtest.predictions"] = len(run)
    entries["backtest.windows"] = len(run.windows)
    entries["backtest.first_date"] = str(run.dates[0])
    entries["backtest.last_date"] = str(run.dates[-1])
    write_manifest(out / "manifest.txt", entries)
    print(
        f"{config.variant.value}: {len(run)} predictions over "
        f"{len(run.windows)} window(s), {run.dates[0]} .. {run.dates[-1]}"
    )
    return EXIT_OK


def _load_run(path, label: str):
    if not Path(path).exists():
        raise DataError(f"run file not found: {path}")
    dates, actuals, predictions, window_index = read_run_csv(path)
    return SimpleNamespace(
        variant=label,
        dates=dates,
        actuals=actuals,
        predictions=predictions,
        window_index=window_index,
    )


def _directional_rows(runs):
    rows = []
    for run in runs:
        for horizon in DIRECTIONAL_HORIZONS:
            if len(run.predictions) > horizon:
                rows.append(
                    (run.variant, horizon, ev.directional_accuracy(run, horizon))
                )
    return ("variant", "horizon", "accuracy_pct"), rows


def _emit(out: Path, stem: str, header, rows) -> None:
    ev.write_csv_table(out / f"{stem}.csv", header, rows)
    (out / f"{stem}.txt").write_text(ev.format_table(header, rows))


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    label = args.label or Path(args.run).stem
    run = _load_run(args.run, label)
    report = ev.quartile_metrics(run)
    _emit(out, "metrics", *ev.metric_table([report]))
    _emit(out, "directional", *_directional_rows([run]))
    entries = {
        "run.command": "evaluate",
        "versions.volcast": __version__,
        "input.run.sha256": _sha256(args.run),
        "evaluate.label": label,
        "evaluate.observations": len(run.predictions),
        "evaluate.mae": repr(report.segments["full"].mae),
        "evaluate.rmse": repr(report.segments["full"].rmse),
    }
    write_manifest(out / "manifest.txt", entries)
    print(
        f"{label}: MAE {report.segments['full'].mae:.6g} "
        f"RMSE {report.segments['full'].rmse:.6g} over {len(run.predictions)} rows"
    )
    return EXIT_OK


def _run_labels(paths):
    labels = [Path(p).stem for p in paths]
    if len(set(labels)) != len(labels):
        labels = [f"{Path(p).parent.name}/{Path(p).stem}" for p in paths]
    if len(set(labels)) != len(labels):
        raise DataError("run files must have distinguishable names")
    return labels


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        raise UsageError("compare needs at least two --runs files")
    out = _out_dir(args)
    labels = _run_labels(args.runs)
    runs = [_load_run(path, label) for path, label in zip(args.runs, labels)]
    first = runs[0]
    for run in runs[1:]:
        if not np.array_equal(run.dates, first.dates):
            raise DataError(
                f"runs {first.variant} and {run.variant} cover different dates; "
                "compare only aligned backtests"
            )
    reports = [ev.quartile_metrics(run) for run in runs]
    _emit(out, "metrics", *ev.metric_table(reports))

    tests = {}
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            errors_i = np.abs(runs[i].predictions - runs[i].actuals)
            errors_j = np.abs(runs[j].predictions - runs[j].actuals)
            tests[f"{labels[i]} vs {labels[j]}"] = ev.mann_whitney_u(errors_i, errors_j)
    _emit(out, "tests", *ev.comparison_table(tests))

    improvement_rows = []
    header = None
    for report in reports[1:]:
        header, rows = ev.improvement_table(ev.improvement(reports[0], report))
        improvement_rows.extend(rows)
    if header is not None:
        _emit(out, "improvement", header, improvement_rows)

    _emit(out, "directional", *_directional_rows(runs))
    entries = {
        "run.command": "compare",
        "versions.volcast": __version__,
        "compare.base": labels[0],
        "compare.runs": ",".join(labels),
        "compare.observations": len(first.predictions),
    }
    for path, label in zip(args.runs, labels):
        entries[f"input.{label.replace('/', '_')}.sha256"] = _sha256(path)
    write_manifest(out / "manifest.txt", entries)
    print(f"compared {len(runs)} runs over {len(first.predictions)} dates")
    return EXIT_OK


def cmd_explain(args) -> int:
    config = _config_from_args(args)
    if config.variant is ModelVariant.GARCH:
        raise DataError("variant garch has no network to explain")
    out = _out_dir(args)
    try:
        target_date = np.datetime64(args.date, "D")
    except ValueError:
        raise DataError(f"cannot parse date {args.date!r}") from None
    sp500, vix = _dataset(config)
    forecasts = None
    if "garch_forecast" in VARIANT_FEATURES[config.variant]:
        forecasts = garch_forecast_series(
            _returns(config, sp500),
            order=config.walkforward.garch_order,
            min_history=config.garch_min_history,
            refit_stride=config.walkforward.garch_refit_stride,
        )
    table = build_features(
        config.variant,
        sp500,
        vix=vix,
        garch_forecasts=forecasts,
        return_kind=config.return_kind,
    )
    wf = config.walkforward
    idx = int(np.searchsorted(table.dates, target_date))
    if idx >= len(table) or table.dates[idx] != target_date:
        raise DataError(f"{args.date} is not a prediction date of this dataset")
    if idx < wf.first_test_row:
        raise DataError(
            f"{args.date} falls before the first test date "
            f"{table.dates[wf.first_test_row]}"
        )
    window = (idx - wf.first_test_row) // wf.refit_stride
    test_end = min(wf.first_test_row + (window + 1) * wf.refit_stride, len(table))
    truncated = FeatureTable(
        dates=table.dates[:test_end],
        features=table.features[:test_end],
        feature_names=table.feature_names,
        target=table.target[:test_end],
    )
    run = walk_forward(
        config.variant,
        truncated,
        wf=wf,
        net_config=config.network_config(len(table.feature_names)),
        lookback=config.lookback,
        seed=config.seed,
        keep_networks=True,
    )
    meta = run.windows[-1]
    net = meta.network
    width = len(table.feature_names)

    def black_box(windows):
        flat = np.asarray(windows).reshape(-1, width)
        scaled = meta.feature_scaler.transform(flat).reshape(np.shape(windows))
        preds = neural.predict(net, scaled)
        return meta.target_scaler.inverse(preds[:, np.newaxis])[:, 0]

    train_table = FeatureTable(
        dates=table.dates[: meta.train_rows],
        features=table.features[: meta.train_rows],
        feature_names=table.feature_names,
        target=table.target[: meta.train_rows],
    )
    bins = discretize_stats(
        make_sequences(train_table, config.lookback).sequences, table.feature_names
    )
    explainer = ExplainerConfig(
        num_samples=config.explain_samples,
        num_features=min(config.explain_features, bins.n_features),
        seed=config.seed,
    )
    instance = table.features[idx - config.lookback : idx]
    explanation = explain_instance(black_box, instance, bins, explainer)
    (out / "explanation.txt").write_text(format_explanation(explanation))
    header, rows = explanation_rows(explanation)
    ev.write_csv_table(out / "explanation.csv", header, rows)
    entries = _base_manifest("explain", config)
    entries["input.sp500.sha256"] = _sha256(config.sp500)
    if vix is not None:
        entries["input.vix.sha256"] = _sha256(config.vix)
    entries["explain.date"] = str(target_date)
    entries["explain.window"] = window
    entries["explain.predicted_value"] = repr(explanation.predicted_value)
    entries["explain.r_squared"] = repr(explanation.r_squared)
    write_manifest(out / "manifest.txt", entries)
    print(
        f"explained {target_date}: predicted {explanation.predicted_value:.6g}, "
        f"top condition {explanation.conditions[0][0]!r}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    summary_header = (
        "scenario",
        "override",
        "status",
        "mae",
        "rmse",
        "mae_improvement_pct",
        "better_than_base",
    )
    summary_rows = []

    def run_case(case_config, directory, command_label):
        directory.mkdir(parents=True, exist_ok=True)
        sp500, vix = _dataset(case_config)
        run, _ = _run_backtest(case_config, sp500, vix)
        write_run_csv(run, directory / "run.csv")
        entries = _base_manifest(command_label, case_config)
        entries["input.sp500.sha256"] = _sha256(case_config.sp500)
        if vix is not None:
            entries["input.vix.sha256"] = _sha256(case_config.vix)
        write_manifest(directory / "manifest.txt", entries)
        report = ev.quartile_metrics(run)
        return report.segments["full"]

    base_metrics = run_case(config, out / "base", "sweep")
    summary_rows.append(
        ("base (*)", "-", "ok", base_metrics.mae, base_metrics.rmse, 0.0, "")
    )
    for name, dotted, value in config.sweep:
        override = f"{dotted}={value}"
        try:
            scenario_config = config.with_override(dotted, value)
            metrics = run_case(scenario_config, out / name, "sweep")
        except (DataError, NumericError) as exc:
            summary_rows.append((name, override, f"failed: {exc}", "", "", "", ""))
            continue
        gain = 100.0 * (base_metrics.mae - metrics.mae) / base_metrics.mae
        summary_rows.append(
            (
                name,
                override,
                "ok",
                metrics.mae,
                metrics.rmse,
                gain,
                "yes" if metrics.mae < base_metrics.mae else "no",
            )
        )
    _emit(out, "summary", summary_header, summary_rows)
    entries = _base_manifest("sweep", config)
    entries["input.sp500.sha256"] = _sha256(config.sp500)
    entries["sweep.scenarios"] = len(config.sweep)
    entries["sweep.completed"] = sum(1 for r in summary_rows if r[2] == "ok") - 1
    write_manifest(out / "manifest.txt", entries)
    print(f"sweep finished: base + {len(config.sweep)} scenario(s)")
    return EXIT_OK


def _add_common(sub) -> None:
    sub.add_argument("--config", default=None, help="INI configuration file")
    sub.add_argument(
        "--profile", choices=("paper", "desk"), default="paper",
        help="settings preset applied under the config file",
    )
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override run.seed")
    sub.add_argument(
        "--garch-refit-stride", type=int, default=None,
        help="override walkforward.garch_refit_stride",
    )
    sub.add_argument("--strict", action="store_true", help="fail on malformed rows")
    sub.add_argument("--sp500", default=None, help="override data.sp500")
    sub.add_argument("--vix", default=None, help="override data.vix")


def build_parser() -> _Parser:
    parser = _Parser(prog="volcast", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    specs = {
        "ingest": (cmd_ingest, "validate and normalize input CSVs"),
        "fit-garch": (cmd_fit_garch, "stationarity test and GARCH order selection"),
        "backtest": (cmd_backtest, "walk-forward forecasts for one variant"),
        "evaluate": (cmd_evaluate, "error metrics for one run file"),
        "compare": (cmd_compare, "metric, rank-test and improvement tables"),
        "explain": (cmd_explain, "local explanation of one prediction"),
        "sweep": (cmd_sweep, "single-parameter sensitivity scenarios"),
    }
    for name, (handler, help_text) in specs.items():
        sub = commands.add_parser(name, help=help_text)
        _add_common(sub)
        sub.set_defaults(handler=handler)
    commands.choices["evaluate"].add_argument("--run", required=True)
    commands.choices["evaluate"].add_argument("--label", default=None)
    commands.choices["compare"].add_argument("--runs", nargs="+", required=True)
    commands.choices["explain"].add_argument("--date", required=True)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
