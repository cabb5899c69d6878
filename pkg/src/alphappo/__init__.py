"""Formulaic alpha evaluation and PPO-driven alpha weighting."""

__version__ = "0.1.0"
