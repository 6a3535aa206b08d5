"""Stabilizer-level benchmarking of graph states under readout noise.

Fidelity witnesses with tensor-product and continuous-time Markov readout
mitigation, calibration of correlated readout errors, perturbed cluster-wire
teleportation scans, and dense reference simulators for cross-checks.
"""

from __future__ import annotations

__version__ = "0.1.0"
