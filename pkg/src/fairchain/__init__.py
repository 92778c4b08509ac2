"""Adjust tabular covariates to be independent of protected attributes via chained conditional CDFs."""

__version__ = "0.1.0"
