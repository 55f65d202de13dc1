"""Weighted adaptive Benjamini-Hochberg testing for mass-univariate lesion studies."""

__version__ = "0.1.0"
