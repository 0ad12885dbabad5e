"""Fermionic and super Brownian paths, exact Berezin calculus and Feynman-Kac estimators."""

__version__ = "0.1.0"
