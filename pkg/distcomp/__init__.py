"""Distributional competition: equilibria and planner optima over distributions on [0, 1]."""

__version__ = "0.1.0"
