"""Doubly robust pseudo-outcome regression for multistate outcomes under censoring."""

__version__ = "0.1.0"
