"""Closed-form rate predictions for a saturating two-detector setup.

All rates are in Hz and all times in seconds.  Dark counts and afterpulses
are not part of these predictions; they only enter the Monte Carlo.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

log = logging.getLogger(__name__)


def _nonneg(**values: float) -> None:
    for name, v in values.items():
        if v < 0 or math.isnan(v):
            raise ValueError(f"{name} must be nonnegative, got {v}")


@dataclass(frozen=True)
class DetectorParams:
    eta_q: float = 0.2
    dead_time_s: float = 0.0
    dark_rate_hz: float = 0.0
    afterpulse_prob: float = 0.0
    afterpulse_tau_s: float = 0.0
    jitter_sigma_s: float = 0.0

    def __post_init__(self):
        _nonneg(
            eta_q=self.eta_q,
            dead_time_s=self.dead_time_s,
            dark_rate_hz=self.dark_rate_hz,
            afterpulse_prob=self.afterpulse_prob,
            afterpulse_tau_s=self.afterpulse_tau_s,
            jitter_sigma_s=self.jitter_sigma_s,
        )
        if self.eta_q > 1:
            raise ValueError(f"eta_q must be <= 1, got {self.eta_q}")
        if self.afterpulse_prob >= 1:
            raise ValueError(f"afterpulse_prob must be < 1, got {self.afterpulse_prob}")


@dataclass(frozen=True)
class RateSet:
    """Source and link rates.  ``total_rate_hz`` counts all photons per arm."""

    pair_rate_hz: float
    total_rate_hz: float
    transmissivity_a: float = 1.0
    transmissivity_b: float = 1.0
    window_s: float = 1e-9

    def __post_init__(self):
        _nonneg(
            pair_rate_hz=self.pair_rate_hz,
            total_rate_hz=self.total_rate_hz,
            window_s=self.window_s,
        )
        if self.pair_rate_hz > self.total_rate_hz:
            raise ValueError("pair_rate_hz cannot exceed total_rate_hz")
        for name in ("transmissivity_a", "transmissivity_b"):
            g = getattr(self, name)
            if not 0 <= g <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {g}")

    @property
    def heralding(self) -> float:
        if self.total_rate_hz == 0:
            return 0.0
        return self.pair_rate_hz / self.total_rate_hz


def db_to_transmissivity(db: float) -> float:
    return 10 ** (-db / 10)


def total_efficiency(eta_q: float, incident_rate_hz: float, dead_time_s: float) -> float:
    """Dead-time-limited detector efficiency eta_Q / (1 + R eta_Q T_d)."""
    _nonneg(eta_q=eta_q, incident_rate_hz=incident_rate_hz, dead_time_s=dead_time_s)
    if eta_q > 1:
        raise ValueError(f"eta_q must be <= 1, got {eta_q}")
    return eta_q / (1 + incident_rate_hz * eta_q * dead_time_s)


def expected_singles_rate(rates: RateSet, det: DetectorParams, arm: str = "A") -> float:
    gamma = rates.transmissivity_a if arm.upper() == "A" else rates.transmissivity_b
    incident = rates.total_rate_hz * gamma
    return incident * total_efficiency(det.eta_q, incident, det.dead_time_s)


def expected_coincidence_rate(rates: RateSet, det_a: DetectorParams, det_b: DetectorParams) -> float:
    ga, gb = rates.transmissivity_a, rates.transmissivity_b
    r = rates.total_rate_hz
    num = rates.pair_rate_hz * det_a.eta_q * det_b.eta_q * ga * gb
    den = (1 + r * ga * det_a.dead_time_s * det_a.eta_q) * (1 + r * gb * det_b.dead_time_s * det_b.eta_q)
    return num / den


def false_coincidence_rate(singles_a_hz: float, singles_b_hz: float, window_s: float) -> float:
    _nonneg(singles_a_hz=singles_a_hz, singles_b_hz=singles_b_hz, window_s=window_s)
    return singles_a_hz * singles_b_hz * window_s


def heralding_probability(
    measured_coinc_hz: float,
    singles_a_hz: float,
    singles_b_hz: float,
    window_s: float,
    eta_total_a: float,
    eta_total_b: float,
) -> float:
    """Heralding estimate from measured rates.

    ``eta_total_*`` are the end-to-end efficiencies of each arm.  A negative
    result means the coincidences sit below the accidental estimate; it is
    returned unclamped and logged.
    """
    _nonneg(measured_coinc_hz=measured_coinc_hz, window_s=window_s)
    if singles_a_hz <= 0 or singles_b_hz <= 0:
        raise ZeroDivisionError("heralding is undefined for zero singles rates")
    if not (0 < eta_total_a <= 1 and 0 < eta_total_b <= 1):
        raise ZeroDivisionError("heralding needs efficiencies in (0, 1]")
    accidental = singles_a_hz * singles_b_hz * window_s
    h = (measured_coinc_hz - accidental) / (
        math.sqrt(eta_total_a * eta_total_b) * math.sqrt(singles_a_hz * singles_b_hz)
    )
    if h < 0:
        log.warning("heralding estimate %.4g is negative: coincidences below accidental floor", h)
    return h


def snr(true_coinc_hz: float, false_coinc_hz: float) -> float:
    if false_coinc_hz <= 0:
        raise ZeroDivisionError("S/N needs a positive false-coincidence rate")
    return true_coinc_hz / false_coinc_hz


def dispersion_broadening(dispersion_ps_per_km_nm: float, length_km: float, bandwidth_nm: float) -> float:
    """FWHM delay spread (ps) a fiber adds to photons of the given bandwidth."""
    _nonneg(
        dispersion_ps_per_km_nm=dispersion_ps_per_km_nm,
        length_km=length_km,
        bandwidth_nm=bandwidth_nm,
    )
    return dispersion_ps_per_km_nm * length_km * bandwidth_nm


def qber_from_visibility(v: float) -> float:
    if not -1 <= v <= 1:
        raise ValueError(f"visibility must lie in [-1, 1], got {v}")
    return (1 - v) / 2
