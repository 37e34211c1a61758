"""Temporal KG forecasting by fusing a frozen LM's top-K output with graph adapters."""

__version__ = "0.1.0"
