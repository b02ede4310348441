#!/usr/bin/env python3
"""Independent walk-forward window arithmetic, from first principles.

Given a raw daily price row count and the walk-forward settings, this
script derives how many rows the feature table keeps, where the first
test prediction falls, how many predictions the backtest emits, and how
many refit windows cover them.  It deliberately imports nothing from
the volcast package so its numbers can cross-check the pipeline.

Row bookkeeping for a raw series of N price rows:
  - returns need a previous close: the first row is lost;
  - rolling volatility over a window of W returns loses W - 1 more;
  - the lagged-volatility feature (if used) loses one more.
Predictions start after the initial training and validation blocks and
cover every remaining table row, one step ahead, in strides of the
refit width.
"""

import argparse
import math
import sys


def table_rows(raw_rows: int, vol_window: int, with_lag: bool) -> int:
    rows = raw_rows - 1 - (vol_window - 1)
    if with_lag:
        rows -= 1
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, required=True, help="raw price rows")
    parser.add_argument("--initial-train", type=int, default=3024)
    parser.add_argument("--initial-val", type=int, default=756)
    parser.add_argument("--refit-stride", type=int, default=252)
    parser.add_argument("--vol-window", type=int, default=22)
    parser.add_argument(
        "--no-lag",
        action="store_true",
        help="table without the lagged-volatility column (pure GARCH variant)",
    )
    args = parser.parse_args(argv)

    rows = table_rows(args.rows, args.vol_window, not args.no_lag)
    first_test = args.initial_train + args.initial_val
    predictions = rows - first_test
    if predictions <= 0:
        print(f"error: no test rows ({rows} table rows, tests start at {first_test})")
        return 1
    refits = math.ceil(predictions / args.refit_stride)
    print(f"table_rows = {rows}")
    print(f"first_test_row = {first_test}")
    print(f"predictions = {predictions}")
    print(f"refits = {refits}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
