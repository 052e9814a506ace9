"""Synthetic source states spanning high to low entanglement quality.

These are stand-ins for real lab sources, whose true states are unknown.
Each is a phi+ Bell state mixed with white noise and an unentangled impurity;
the impurity carries some circular polarization so the two single-photon
visibility extremes differ.
"""

from __future__ import annotations

import math

from .quantum_state import SourceStateModel

_S = 1 / math.sqrt(2)

PRESETS: dict[str, SourceStateModel] = {
    "ideal": SourceStateModel(),
    "high": SourceStateModel(
        bell_fraction=0.94,
        depolarized_fraction=0.04,
        impurity_fraction=0.02,
        impurity_a=(0.0, 0.0, 1.0),
        impurity_b=(0.0, 0.0, -1.0),
    ),
    "medium": SourceStateModel(
        bell_fraction=0.84,
        depolarized_fraction=0.10,
        impurity_fraction=0.06,
        impurity_a=(_S, 0.0, _S),
        impurity_b=(_S, 0.0, -_S),
    ),
    "low": SourceStateModel(
        bell_fraction=0.55,
        depolarized_fraction=0.30,
        impurity_fraction=0.15,
        impurity_a=(1.0, 0.0, 0.0),
        impurity_b=(1.0, 0.0, 0.0),
    ),
}

QUALITY_ORDER = ("high", "medium", "low")
