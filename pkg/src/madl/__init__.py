"""Directional-loss LSTM forecasting with walk-forward Long/Short backtests."""

__version__ = "0.1.0"
