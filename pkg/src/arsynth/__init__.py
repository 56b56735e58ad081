"""Data-driven output-feedback synthesis for autoregressive plants."""

__version__ = "0.1.0"
