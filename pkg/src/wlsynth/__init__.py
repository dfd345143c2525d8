"""Trace-driven workload synthesis over a benchmark query pool."""

__version__ = "0.1.0"
