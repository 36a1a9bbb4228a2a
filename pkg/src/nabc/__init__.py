"""Finite-sample inference for all-pairwise dependence matrices via angles."""

__version__ = "0.1.0"
