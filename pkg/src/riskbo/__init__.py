"""Bayesian optimization of VaR / CVaR objectives with knowledge-gradient acquisitions."""

__version__ = "0.1.0"
