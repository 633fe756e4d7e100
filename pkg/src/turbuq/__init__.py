"""Data-driven eigenvalue-perturbation uncertainty estimates for RANS turbulence models."""

__version__ = "0.1.0"
