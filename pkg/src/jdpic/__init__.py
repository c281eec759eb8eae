"""Threshold quasi-likelihood estimation and PIC model selection for jump diffusions."""

__version__ = "0.1.0"
