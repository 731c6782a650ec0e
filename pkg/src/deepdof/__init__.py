"""Finite deep networks from integral-form teachers: construction, bounds and ERM."""

__version__ = "0.1.0"
