"""Risk-averse quantal response equilibria: solvers, verification tools and MARL trainers."""

__version__ = "0.1.0"
