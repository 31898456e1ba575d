"""Robustness toolkit for pairwise-preference leaderboards."""

__version__ = "0.1.0"
