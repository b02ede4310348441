"""Bundled synthetic market-data snapshots.

Both CSVs are simulated (see scripts/make_snapshot.py), calibrated so the
S&P log-return moments match the documented targets. They share one
trading calendar: 6032 sessions from 2000-01-03 through 2023-12-21.
"""

from importlib import resources


def sp500_path() -> str:
    """Filesystem path of the bundled S&P 500 close-price snapshot."""
    return str(resources.files(__name__) / "sp500_snapshot.csv")


def vix_path() -> str:
    """Filesystem path of the bundled VIX close snapshot."""
    return str(resources.files(__name__) / "vix_snapshot.csv")
