"""Langevin diffusions on the torus: simulation, transition-density
approximations, Fokker-Planck solvers, estimation and diagnostics."""

__version__ = "0.1.0"
