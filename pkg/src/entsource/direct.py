"""Entanglement metrics computed directly from coincidence and singles counts.

All metrics use count rates (counts / duration per setting), so they are
unchanged when every count is scaled by the same factor.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .counts import BasisCounts, MissingSettingsError, Setting
from .quantum_state import (
    ORTHOGONAL,
    SourceStateModel,
    bell_state,
    bloch_vector,
    coincidence_probability,
    partial_trace,
    rotation_unitary,
)

log = logging.getLogger(__name__)

LINEAR_ANGLE = {"H": 0, "D": 45, "V": 90, "A": 135}
_ANGLE_AXIS = {v: k for k, v in LINEAR_ANGLE.items()}


def _partner(j: str, expected: str) -> tuple[str, str]:
    """(correct, wrong) analyzer on the far side when the near side is at ``j``."""
    j = j.upper()
    k = ORTHOGONAL[j]
    bell = bell_state(expected)
    if coincidence_probability(bell, j, j) >= coincidence_probability(bell, j, k):
        return j, k
    return k, j


def visibility(counts: BasisCounts, j: str, expected: str = "phi+") -> float:
    """(N_correct - N_wrong) / (N_correct + N_wrong) with A's analyzer at ``j``.

    For phi+ the correct partner is j itself in the linear bases and the
    orthogonal circular axis for R/L.
    """
    good, bad = _partner(j, expected)
    counts.require([(j, good), (j, bad)])
    n_good, n_bad = counts.rate(j, good), counts.rate(j, bad)
    if n_good + n_bad <= 0:
        raise ZeroDivisionError(f"no coincidences for analyzer {j}")
    return (n_good - n_bad) / (n_good + n_bad)


def visibility_stderr(counts: BasisCounts, j: str, expected: str = "phi+") -> float:
    """Binomial standard error of ``visibility`` from the raw counts."""
    good, bad = _partner(j, expected)
    n = counts.count(j, good) + counts.count(j, bad)
    v = visibility(counts, j, expected)
    return math.sqrt(max(1 - v * v, 0.0) / n)


_BASES = {"HV": ("H", "V"), "DA": ("D", "A"), "RL": ("R", "L")}


def average_visibility(counts: BasisCounts, basis: str = "HV", expected: str = "phi+") -> float:
    try:
        j, k = _BASES[basis.upper()]
    except KeyError:
        raise ValueError(f"basis must be one of {sorted(_BASES)}") from None
    counts.require([(j, j), (j, k), (k, j), (k, k)])
    return (visibility(counts, j, expected) + visibility(counts, k, expected)) / 2


def qber(counts: BasisCounts, expected: str = "phi+") -> float:
    """Wrong-correlation fraction over the HV and DA bases."""
    wrong = right = 0.0
    for j, k in (_BASES["HV"], _BASES["DA"]):
        counts.require([(j, j), (j, k), (k, j), (k, k)])
        for x in (j, k):
            good, bad = _partner(x, expected)
            right += counts.rate(x, good)
            wrong += counts.rate(x, bad)
    if right + wrong <= 0:
        raise ZeroDivisionError("QBER needs at least one coincidence")
    return wrong / (right + wrong)


def binary_entropy(p1: float, p2: float) -> float:
    """H(p1, p2) in bits with 0 log 0 = 0."""
    return -sum(p * math.log2(p) for p in (p1, p2) if p > 0)


@dataclass
class EntropyReport:
    side: str
    same: dict[str, float] = field(default_factory=dict)
    cross: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return sum(self.same.values()) + sum(self.cross.values())

    def to_json(self) -> dict:
        return {"side": self.side, "same": self.same, "cross": self.cross, "total": self.total}


def entropy_settings(j: str, side: str = "A") -> dict[str, Setting]:
    """Settings used for index ``j``: same-basis j/k and cross-basis l/m."""
    theta = LINEAR_ANGLE[j]
    far = {
        "j": j,
        "k": _ANGLE_AXIS[(theta + 90) % 180],
        "l": _ANGLE_AXIS[(theta + 45) % 180],
        "m": _ANGLE_AXIS[(theta - 45) % 180],
    }
    if side.upper() == "A":
        return {name: (j, x) for name, x in far.items()}
    return {name: (x, j) for name, x in far.items()}


def coincidence_entropies(counts: BasisCounts, side: str = "A") -> EntropyReport:
    """One-sided coincidence entropies in bits; the total is at most 8.

    For side A, index j fixes Alice's analyzer and Bob's analyzer takes the
    values j, j+90 (same basis) and j+-45 (cross basis).  Side B swaps roles.
    """
    side = side.upper()
    needed = [s for j in LINEAR_ANGLE for s in entropy_settings(j, side).values()]
    counts.require(needed)
    report = EntropyReport(side)
    for j in ("H", "V", "D", "A"):
        s = entropy_settings(j, side)
        n_jj, n_jk = counts.rate(*s["j"]), counts.rate(*s["k"])
        n_jl, n_jm = counts.rate(*s["l"]), counts.rate(*s["m"])
        n_same, n_cross = n_jj + n_jk, n_jl + n_jm
        if n_same <= 0 or n_cross <= 0:
            raise ZeroDivisionError(f"no coincidences for index {j} on side {side}")
        report.same[j] = 1 - binary_entropy(n_jj / n_same, n_jk / n_same)
        report.cross[j] = binary_entropy(n_jl / n_cross, n_jm / n_cross)
    return report


# -- sinusoid fits --------------------------------------------------------------


def _fit_2theta(angles_deg, values) -> tuple[float, float, float]:
    """Least-squares c0 + c1 cos 2t + c2 sin 2t."""
    t = np.radians(np.asarray(angles_deg, dtype=float))
    y = np.asarray(values, dtype=float)
    design = np.column_stack([np.ones_like(t), np.cos(2 * t), np.sin(2 * t)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(coef[0]), float(coef[1]), float(coef[2])


@dataclass(frozen=True)
class VisibilityFit:
    visibility: float
    offset: float
    amplitude: float
    phase_deg: float
    degenerate: bool = False

    def predict(self, theta_deg) -> np.ndarray:
        t = np.radians(np.asarray(theta_deg, dtype=float))
        return self.offset + self.amplitude * np.cos(2 * t - 2 * math.radians(self.phase_deg))


def visibility_curve(settings: Sequence[tuple[float, float, float]]) -> VisibilityFit:
    """Fit coincidences vs relative polarizer angle (angle_b - angle_a).

    Returns the contrast (max - min) / (max + min) of the fitted sinusoid in
    twice the relative angle.
    """
    if len(settings) < 8:
        raise ValueError("a visibility curve needs at least 8 points")
    rows = np.asarray(settings, dtype=float)
    rel = rows[:, 1] - rows[:, 0]
    c0, c1, c2 = _fit_2theta(rel, rows[:, 2])
    amp = math.hypot(c1, c2)
    phase = math.degrees(math.atan2(c2, c1)) / 2
    if c0 <= 0 or amp <= 1e-12 * max(abs(c0), 1.0):
        log.info("flat visibility curve; reporting V = 0")
        return VisibilityFit(0.0, c0, 0.0, 0.0, degenerate=True)
    return VisibilityFit(amp / c0, c0, amp, phase)


@dataclass(frozen=True)
class SinglesScan:
    arm: str
    samples: Sequence[tuple[float, float]]
    pc_setting: str = ""

    def __post_init__(self):
        distinct = {round(a % 180, 9) for a, _ in self.samples}
        if len(distinct) < 4:
            raise ValueError("a singles scan needs at least 4 distinct polarizer angles (mod 180 deg)")


def single_photon_visibility(scan: SinglesScan) -> float:
    """Contrast of the fitted singles-vs-polarizer-angle sinusoid."""
    angles, values = zip(*scan.samples)
    if sum(values) <= 0:
        raise ZeroDivisionError("singles scan has no counts")
    c0, c1, c2 = _fit_2theta(angles, values)
    return math.hypot(c1, c2) / c0


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = math.pi * (1 + math.sqrt(5)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def pc_grid(n_axes: int = 64, n_angles: int = 8) -> list[np.ndarray]:
    """Polarization-controller unitaries: identity plus rotations by k*pi/n_angles
    about Fibonacci-sphere axes."""
    grid = [np.eye(2, dtype=complex)]
    for axis in fibonacci_sphere(n_axes):
        for k in range(1, n_angles + 1):
            grid.append(rotation_unitary(axis, 180.0 * k / n_angles))
    return grid


def linear_dop(rho1: np.ndarray) -> float:
    """Singles visibility seen by a rotating linear polarizer: sqrt(s1^2 + s2^2)."""
    s = bloch_vector(rho1)
    return float(math.hypot(s[0], s[1]))


@dataclass(frozen=True)
class SVExtremes:
    sv_max: float
    sv_min: float
    argmax_pc: np.ndarray
    argmin_pc: np.ndarray


def sv_extremize(source: SourceStateModel, arm: str = "A", pc_search: Sequence[np.ndarray] | None = None) -> SVExtremes:
    """Extremal single-photon visibility over controller settings before the polarizer."""
    grid = pc_grid() if pc_search is None else list(pc_search)
    if not grid:
        raise ValueError("empty controller search set")
    red = partial_trace(source.to_density_matrix(), arm)
    values = [linear_dop(u @ red @ u.conj().T) for u in grid]
    imax, imin = int(np.argmax(values)), int(np.argmin(values))
    return SVExtremes(values[imax], values[imin], grid[imax], grid[imin])
