"""Constrained-control toolkit: interval reference governor, multi-model
fault detection with a computable misidentification bound, recoverable-set
reconfiguration, and a seeded Monte Carlo simulation harness."""

__version__ = "0.1.0"
