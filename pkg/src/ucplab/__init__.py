"""Symbolic and numerical checks for Carleman estimates of anisotropic fourth-order operators."""

__version__ = "0.1.0"
