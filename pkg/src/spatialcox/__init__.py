"""Two-stage Bayesian variable selection for Cox regression with
spatially varying coefficients."""

__version__ = "0.1.0"
