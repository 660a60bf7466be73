"""Simulation and verification toolkit for stochastic recursive inclusions
with iterate-dependent Markov noise."""

__version__ = "0.1.0"
