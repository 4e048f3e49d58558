"""Governance, policy and chain-of-trust machinery for moving controlled-access
data between authorized cloud platforms."""

__version__ = "0.1.0"
