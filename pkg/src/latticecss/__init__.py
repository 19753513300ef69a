"""Gauge-invariant Chern-Simons-Schrodinger system on a one-dimensional lattice."""

from .lattice import ComplexField, GaugeTriple, LatticeWindow, ModelParams, mass

__all__ = ["ComplexField", "GaugeTriple", "LatticeWindow", "ModelParams", "mass"]
__version__ = "0.1.0"
