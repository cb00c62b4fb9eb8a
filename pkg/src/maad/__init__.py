"""Unsupervised anomaly detection for multi-agent driving trajectories."""

__version__ = "0.1.0"
