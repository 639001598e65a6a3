"""Skewness-dispersion predictor construction and equity-premium evaluation."""

__version__ = "0.1.0"
