"""Simulation-with-optimism inference for adaptively collected bandit data."""

__version__ = "0.1.0"
