"""Empirical-Bayes ranking under biased clicks, with a simulation harness."""

__version__ = "0.1.0"
