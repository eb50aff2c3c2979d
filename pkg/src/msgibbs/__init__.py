"""Multiscale Gibbs measures: construction, variational characterization and stochastic reproduction."""

__version__ = "0.1.0"
