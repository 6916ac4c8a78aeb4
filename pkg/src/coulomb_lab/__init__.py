"""Numerical toolkit for weighted logarithmic potential theory on the plane and
the Riemann sphere: equilibrium measures, weighted Fekete points,
Bernstein-Markov constants, log-gas sampling and large-deviation checks."""

__version__ = "0.1.0"
