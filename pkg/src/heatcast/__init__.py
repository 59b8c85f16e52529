"""Hourly district-heat demand forecasting with multi-layer Elman networks."""

__version__ = "0.1.0"
