"""Coincidence count tables over analyzer settings."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np

from .quantum_state import AXES, coincidence_probability

Setting = tuple[str, str]

TOMOGRAPHY_16: tuple[Setting, ...] = tuple(product("HVDR", repeat=2))
TOMOGRAPHY_36: tuple[Setting, ...] = tuple(product(AXES, repeat=2))
LINEAR_16: tuple[Setting, ...] = tuple(product("HVDA", repeat=2))


class MissingSettingsError(KeyError):
    def __init__(self, missing: Iterable[Setting]):
        self.missing = sorted(set(missing))
        labels = ", ".join(f"({a},{b})" for a, b in self.missing)
        super().__init__(f"missing analyzer settings: {labels}")

    def __str__(self):
        return self.args[0]


def _key(a: str, b: str) -> Setting:
    a, b = a.upper(), b.upper()
    if a not in AXES or b not in AXES:
        raise ValueError(f"unknown analyzer setting ({a},{b})")
    return a, b


@dataclass(frozen=True)
class BasisCounts:
    """Coincidence counts per (axis_a, axis_b) setting.

    ``durations`` defaults to 1 s per setting.  ``singles`` optionally holds the
    (A, B) singles counts of each setting, needed to subtract accidentals.
    """

    counts: Mapping[Setting, float]
    durations: Mapping[Setting, float] = field(default_factory=dict)
    singles: Mapping[Setting, tuple[float, float]] = field(default_factory=dict)
    window_s: float | None = None

    def __post_init__(self):
        counts = {_key(*k): float(v) for k, v in self.counts.items()}
        if any(v < 0 for v in counts.values()):
            raise ValueError("counts must be nonnegative")
        durations = {_key(*k): float(v) for k, v in self.durations.items()}
        if any(v <= 0 for v in durations.values()):
            raise ValueError("durations must be positive")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "singles", {_key(*k): tuple(v) for k, v in self.singles.items()})

    @property
    def settings(self) -> list[Setting]:
        return list(self.counts)

    def require(self, settings: Iterable[Setting]) -> None:
        missing = [s for s in settings if _key(*s) not in self.counts]
        if missing:
            raise MissingSettingsError(missing)

    def count(self, a: str, b: str) -> float:
        key = _key(a, b)
        if key not in self.counts:
            raise MissingSettingsError([key])
        return self.counts[key]

    def duration(self, a: str, b: str) -> float:
        return self.durations.get(_key(a, b), 1.0)

    def rate(self, a: str, b: str) -> float:
        return self.count(a, b) / self.duration(a, b)

    def total(self) -> float:
        return float(sum(self.counts.values()))

    def scaled(self, c: float) -> "BasisCounts":
        return BasisCounts({k: c * v for k, v in self.counts.items()}, self.durations, self.singles, self.window_s)

    def subset(self, settings: Iterable[Setting]) -> "BasisCounts":
        keys = [_key(*s) for s in settings]
        self.require(keys)
        pick = lambda m: {k: m[k] for k in keys if k in m}  # noqa: E731
        return BasisCounts(pick(self.counts), pick(self.durations), pick(self.singles), self.window_s)

    def accidentals(self, a: str, b: str) -> float:
        key = _key(a, b)
        if self.window_s is None or key not in self.singles:
            raise ValueError(f"no singles/window recorded for setting ({a},{b})")
        sa, sb = self.singles[key]
        return sa * sb * self.window_s / self.duration(a, b)

    def subtract_accidentals(self) -> "BasisCounts":
        """Remove the R_MA R_MB dt T accidental floor from every setting (clipped at 0)."""
        new = {k: max(v - self.accidentals(*k), 0.0) for k, v in self.counts.items()}
        return BasisCounts(new, self.durations, self.singles, self.window_s)


def expected_counts(rho, settings: Sequence[Setting] = TOMOGRAPHY_16, shots: float = 1.0) -> BasisCounts:
    """Noiseless counts shots * Tr(rho P_a (x) P_b) for each setting."""
    return BasisCounts({s: shots * coincidence_probability(rho, *s) for s in settings})


def sample_counts(rho, settings: Sequence[Setting], shots: float, seed: int) -> BasisCounts:
    """Poisson counts with mean shots * Tr(rho P_a (x) P_b), deterministic per seed."""
    rng = np.random.default_rng(seed)
    return BasisCounts(
        {s: int(rng.poisson(shots * coincidence_probability(rho, *s))) for s in settings}
    )
