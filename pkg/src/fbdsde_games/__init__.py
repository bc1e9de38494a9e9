"""Equilibrium synthesis and exact tree verification for LQ games of
forward-backward doubly stochastic systems."""

__version__ = "0.1.0"
