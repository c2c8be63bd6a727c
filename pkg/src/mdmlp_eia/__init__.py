"""Multi-domain dynamic MLPs with energy invariant attention for multivariate forecasting."""

__version__ = "0.1.0"
