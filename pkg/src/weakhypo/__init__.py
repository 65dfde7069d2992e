"""Weak hypocoercivity toolkit: potentials, convergence rates, exact sampling,
Euler-Maruyama simulation and a discrete operator laboratory."""

__version__ = "0.1.0"
