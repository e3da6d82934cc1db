"""msalab: quasi-periodic randelette potentials and multi-scale analysis at desk scale."""

__version__ = "0.1.0"
