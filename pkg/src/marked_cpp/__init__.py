"""Simulation and numerics lab for marked coalescent point processes of
splitting trees with neutral mutations at birth."""

__version__ = "0.1.0"
