"""Numerical laboratory for Ricci flow coupled to a scalar heat field on
warped-product geometries: integration, backward path functionals,
conjugate heat solutions, log-Sobolev/symmetrization checks, and the
verification harness tying them together."""

__version__ = "0.1.0"
