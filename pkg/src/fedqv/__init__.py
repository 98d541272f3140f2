"""Quadratic-voting aggregation for federated learning, with baselines and attacks."""

__version__ = "0.1.0"
