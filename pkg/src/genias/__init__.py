"""Generalized IAS solver for hierarchical Bayesian linear inverse problems."""

__version__ = "0.1.0"
