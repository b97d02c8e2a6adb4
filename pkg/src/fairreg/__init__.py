"""Group-fair penalized regression: FAIR, joint lasso and baselines."""

__version__ = "0.1.0"
