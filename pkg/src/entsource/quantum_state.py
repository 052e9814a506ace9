"""Two-qubit polarization state algebra.

Basis order is fixed as (HH, HV, VH, VV); the first factor is Alice (arm A),
the second Bob (arm B).  Entropies are reported in the units noted on each
function: von Neumann entropy in bits, Renyi-2 entropy in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

BASIS = ("HH", "HV", "VH", "VV")
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

_S2 = 1 / math.sqrt(2)

AXIS_VECTORS = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([_S2, _S2], dtype=complex),
    "A": np.array([_S2, -_S2], dtype=complex),
    "R": np.array([_S2, 1j * _S2], dtype=complex),
    "L": np.array([_S2, -1j * _S2], dtype=complex),
}
ORTHOGONAL = {"H": "V", "V": "H", "D": "A", "A": "D", "R": "L", "L": "R"}
AXES = tuple(AXIS_VECTORS)

# Pauli matrices in the H/V basis: s1 = H/V contrast, s2 = D/A, s3 = R/L.
PAULI = (
    np.eye(2, dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
)

# Analyzer setting: an axis label, a linear-polarizer angle in degrees
# (0 = H, 90 = V), or None for "no polarizer".
Analyzer = Union[str, float, int, None]


class StateError(ValueError):
    """Raised when a matrix violates the density-matrix contract."""


def _as_array(rho) -> np.ndarray:
    return rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def check_density(m: np.ndarray, dim: int = 4) -> None:
    if m.shape != (dim, dim):
        raise StateError(f"expected a {dim}x{dim} matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise StateError("matrix has non-finite entries")
    herm = np.max(np.abs(m - m.conj().T))
    if herm > HERMITIAN_TOL:
        raise StateError(f"matrix is not Hermitian (max deviation {herm:.3g})")
    tr = np.trace(m).real
    if abs(tr - 1) > TRACE_TOL:
        raise StateError(f"trace is {tr!r}, expected 1")
    lam_min = np.linalg.eigvalsh(m).min()
    if lam_min < -PSD_TOL:
        raise StateError(f"matrix is not positive semidefinite (min eigenvalue {lam_min:.3g})")


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Validated 4x4 two-qubit density matrix in (HH, HV, VH, VV) order."""

    elements: np.ndarray

    def __post_init__(self):
        m = np.array(self.elements, dtype=complex)
        check_density(m)
        m.setflags(write=False)
        object.__setattr__(self, "elements", m)

    @classmethod
    def from_unnormalized(cls, m) -> "DensityMatrix":
        """Symmetrize and trace-normalize ``m`` before validating it."""
        m = np.asarray(m, dtype=complex)
        m = (m + m.conj().T) / 2
        return cls(m / np.trace(m).real)

    def eigenvalues(self) -> np.ndarray:
        return _clamped_eigenvalues(self.elements)

    def to_json(self) -> dict:
        return {
            "basis": list(BASIS),
            "elements": [[[float(z.real), float(z.imag)] for z in row] for row in self.elements],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DensityMatrix":
        basis = obj.get("basis", list(BASIS))
        if list(basis) != list(BASIS):
            raise StateError(f"unsupported basis order {basis}; expected {list(BASIS)}")
        m = np.array([[complex(re, im) for re, im in row] for row in obj["elements"]])
        return cls(m)

    def __array__(self, dtype=None, copy=None):
        return self.elements if dtype is None else self.elements.astype(dtype)

    def __repr__(self):
        return f"DensityMatrix(purity={purity(self):.4f})"


def _clamped_eigenvalues(m: np.ndarray) -> np.ndarray:
    lam = np.linalg.eigvalsh(m)
    if lam.min() < -PSD_TOL:
        raise StateError(f"eigenvalue {lam.min():.3g} below clamping window")
    return np.clip(lam, 0.0, None)


def axis_vector(axis: Analyzer) -> np.ndarray:
    """Single-qubit state vector of a polarization axis or linear angle (deg)."""
    if isinstance(axis, str):
        try:
            return AXIS_VECTORS[axis.upper()]
        except KeyError:
            raise ValueError(f"unknown polarization axis {axis!r}") from None
    theta = math.radians(float(axis))
    return np.array([math.cos(theta), math.sin(theta)], dtype=complex)


def projector(axis: Analyzer) -> np.ndarray:
    """2x2 projector of an analyzer; identity when ``axis`` is None."""
    if axis is None:
        return np.eye(2, dtype=complex)
    v = axis_vector(axis)
    return np.outer(v, v.conj())


def bloch_state(vector: Sequence[float]) -> np.ndarray:
    """Single-qubit density matrix from a Stokes/Bloch vector (s1, s2, s3)."""
    s = np.asarray(vector, dtype=float)
    if s.shape != (3,):
        raise ValueError("Bloch vector needs three components")
    if np.linalg.norm(s) > 1 + 1e-12:
        raise ValueError(f"Bloch vector {s.tolist()} is longer than 1")
    return (PAULI[0] + s[0] * PAULI[1] + s[1] * PAULI[2] + s[2] * PAULI[3]) / 2


def bloch_vector(rho1: np.ndarray) -> np.ndarray:
    """Stokes vector (s1, s2, s3) of a 2x2 density matrix."""
    return np.array([np.trace(rho1 @ p).real for p in PAULI[1:]])


def rotation_unitary(axis: Sequence[float], angle_deg: float) -> np.ndarray:
    """SU(2) element rotating the Bloch sphere by ``angle_deg`` about ``axis``."""
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        return np.eye(2, dtype=complex)
    n = n / norm
    half = math.radians(angle_deg) / 2
    gen = n[0] * PAULI[1] + n[1] * PAULI[2] + n[2] * PAULI[3]
    return math.cos(half) * PAULI[0] - 1j * math.sin(half) * gen


def _bell_vector(kind: str) -> np.ndarray:
    kinds = {
        "phi+": [1, 0, 0, 1],
        "phi-": [1, 0, 0, -1],
        "psi+": [0, 1, 1, 0],
        "psi-": [0, 1, -1, 0],
    }
    key = kind.replace("−", "-").lower()
    if key not in kinds:
        raise ValueError(f"unknown Bell state {kind!r}; choose from {sorted(kinds)}")
    return np.array(kinds[key], dtype=complex) * _S2


BELL_KINDS = ("phi+", "phi-", "psi+", "psi-")


def bell_state(kind: str = "phi+") -> DensityMatrix:
    v = _bell_vector(kind)
    return DensityMatrix(np.outer(v, v.conj()))


def maximally_mixed() -> DensityMatrix:
    return DensityMatrix(np.eye(4, dtype=complex) / 4)


def product_state(rho_a, rho_b) -> DensityMatrix:
    return DensityMatrix(np.kron(np.asarray(rho_a, dtype=complex), np.asarray(rho_b, dtype=complex)))


def werner(p: float, kind: str = "phi+") -> DensityMatrix:
    """p * |bell><bell| + (1 - p) * I/4."""
    if not 0 <= p <= 1:
        raise ValueError(f"Werner weight must lie in [0, 1], got {p}")
    return mix([bell_state(kind), maximally_mixed()], [p, 1 - p])


def mix(states: Sequence, weights: Sequence[float]) -> DensityMatrix:
    """Convex combination of density matrices."""
    w = np.asarray(weights, dtype=float)
    if len(states) != len(w) or len(w) == 0:
        raise ValueError("need one weight per state")
    if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise ValueError(f"weights must be nonnegative and sum to 1, got {w.tolist()}")
    m = sum(wi * _as_array(s) for wi, s in zip(w, states))
    return DensityMatrix.from_unnormalized(m)


def apply_local_unitaries(rho, u_a: np.ndarray, u_b: np.ndarray) -> DensityMatrix:
    u = np.kron(u_a, u_b)
    return DensityMatrix.from_unnormalized(u @ _as_array(rho) @ u.conj().T)


def coincidence_probability(rho, axis_a: Analyzer, axis_b: Analyzer) -> float:
    """Born probability Tr(rho . P_a (x) P_b) that both photons pass."""
    if not isinstance(rho, DensityMatrix):
        rho = DensityMatrix(rho)
    op = np.kron(projector(axis_a), projector(axis_b))
    p = np.trace(rho.elements @ op).real
    return float(min(max(p, 0.0), 1.0))


def partial_trace(rho, keep: str = "A") -> np.ndarray:
    """Reduced 2x2 state of side ``keep`` ('A' or 'B')."""
    m = _as_array(rho).reshape(2, 2, 2, 2)
    side = keep.upper()
    if side == "A":
        return np.einsum("ijkj->ik", m)
    if side == "B":
        return np.einsum("jijk->ik", m)
    raise ValueError(f"side must be 'A' or 'B', got {keep!r}")


def purity(rho) -> float:
    m = _as_array(rho)
    return float(np.real(np.trace(m @ m)))


def von_neumann_entropy(rho) -> float:
    """-Tr(rho log2 rho), in bits."""
    lam = _clamped_eigenvalues(_as_array(rho))
    lam = lam[lam > 0]
    return float(max(-(lam * np.log2(lam)).sum(), 0.0)) + 0.0


def renyi2_entropy(rho, side: str = "A") -> float:
    """-ln Tr(rho_side^2) of the reduced state, in nats."""
    red = partial_trace(rho, side)
    return float(-math.log(np.real(np.trace(red @ red))))


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(m)
    return (vec * np.sqrt(np.clip(lam, 0, None))) @ vec.conj().T


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    a, b = _as_array(rho), _as_array(sigma)
    # evaluate the same expression for either argument order so the result is
    # exactly symmetric; the root is taken of the better-conditioned argument
    if (np.linalg.eigvalsh(b).min(), b.tobytes()) > (np.linalg.eigvalsh(a).min(), a.tobytes()):
        a, b = b, a
    s = _sqrtm_psd(a)
    inner = s @ b @ s
    lam = np.linalg.eigvalsh((inner + inner.conj().T) / 2)
    # round-off eigenvalues would otherwise contribute sqrt(1e-17) ~ 3e-9
    lam[lam < 1e-14 * max(lam.max(), 1e-300)] = 0.0
    f = np.sqrt(lam).sum() ** 2
    return float(min(max(f, 0.0), 1.0))


def bell_fidelity(rho, kind: str = "phi+") -> float:
    v = _bell_vector(kind)
    return float(np.real(v.conj() @ _as_array(rho) @ v))


@dataclass(frozen=True)
class SourceStateModel:
    """Tunable source state: Bell part + white noise + unentangled impurity.

    ``impurity_a``/``impurity_b`` are Bloch vectors of the two sides of the
    product impurity.  ``pre_rotation_a``/``pre_rotation_b`` are 2x2 unitaries
    applied to the whole state (fiber transformation and controller setting).
    """

    bell_kind: str = "phi+"
    bell_fraction: float = 1.0
    depolarized_fraction: float = 0.0
    impurity_fraction: float = 0.0
    impurity_a: tuple = (1.0, 0.0, 0.0)
    impurity_b: tuple = (1.0, 0.0, 0.0)
    pre_rotation_a: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    pre_rotation_b: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))

    def __post_init__(self):
        fr = (self.bell_fraction, self.depolarized_fraction, self.impurity_fraction)
        if any(f < 0 or f > 1 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ValueError(f"state fractions must lie in [0, 1] and sum to 1, got {fr}")
        for u in (self.pre_rotation_a, self.pre_rotation_b):
            u = np.asarray(u)
            if u.shape != (2, 2) or not np.allclose(u.conj().T @ u, np.eye(2), atol=1e-10):
                raise ValueError("pre-rotations must be 2x2 unitaries")
        bloch_state(self.impurity_a)
        bloch_state(self.impurity_b)

    def impurity_state(self) -> DensityMatrix:
        return product_state(bloch_state(self.impurity_a), bloch_state(self.impurity_b))

    def to_density_matrix(self) -> DensityMatrix:
        parts = [bell_state(self.bell_kind), maximally_mixed(), self.impurity_state()]
        rho = mix(parts, [self.bell_fraction, self.depolarized_fraction, self.impurity_fraction])
        return apply_local_unitaries(rho, np.asarray(self.pre_rotation_a), np.asarray(self.pre_rotation_b))
