"""Longitudinal volume forecasting on gray-matter density maps."""

__version__ = "0.1.0"
