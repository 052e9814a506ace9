"""Simulation and analysis toolkit for polarization-entangled photon-pair sources."""

from .analytic import (
    DetectorParams,
    RateSet,
    expected_coincidence_rate,
    expected_singles_rate,
    false_coincidence_rate,
    heralding_probability,
    total_efficiency,
)
from .counts import BasisCounts
from .quantum_state import DensityMatrix, SourceStateModel, bell_state, werner
from .simulation import ExperimentConfig, Fiber, count_coincidences, delay_histogram, scan_grid, simulate
from .tomography import mle_reconstruct, qst_metrics

__version__ = "0.1.0"

__all__ = [
    "BasisCounts",
    "DensityMatrix",
    "DetectorParams",
    "ExperimentConfig",
    "Fiber",
    "RateSet",
    "SourceStateModel",
    "bell_state",
    "count_coincidences",
    "delay_histogram",
    "expected_coincidence_rate",
    "expected_singles_rate",
    "false_coincidence_rate",
    "heralding_probability",
    "mle_reconstruct",
    "qst_metrics",
    "scan_grid",
    "simulate",
    "total_efficiency",
    "werner",
]
