"""Logarithmic truncated Euler-Maruyama (LTEM) for SDEs with positive solutions."""

__version__ = "0.1.0"
