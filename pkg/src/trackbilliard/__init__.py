"""Simulation and verification tools for planar and 3-D track billiards."""

__version__ = "0.1.0"
