"""Volatility forecasting toolkit: GARCH, LSTM, hybrid pipelines, evaluation, explanation."""

__version__ = "0.1.0"

from volcast.errors import DataError, NumericError, VolcastError

__all__ = ["DataError", "NumericError", "VolcastError", "__version__"]
