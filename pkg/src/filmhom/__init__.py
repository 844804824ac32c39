"""Homogenized membrane energies of thin films with periodic microstructure."""

__version__ = "0.1.0"
