"""Two-qubit polarization state tomography.

Reconstruction runs in two stages: a linear inversion of the measured
rates, then a Poisson maximum-likelihood fit over physical states written as
rho = T^dagger T / Tr(T^dagger T) with T lower triangular.  The free overall
scale of T absorbs the unknown pair flux.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from . import quantum_state as qs
from .counts import TOMOGRAPHY_16, BasisCounts, Setting, sample_counts
from .quantum_state import DensityMatrix

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000

# Hermitian basis sigma_i (x) sigma_j; Tr(B_m B_n) = 4 delta_mn.
_PAULI_PRODUCTS = np.array([np.kron(p, q) for p in qs.PAULI for q in qs.PAULI])
_TRIL = np.tril_indices(4)
_OFFDIAG = np.tril_indices(4, -1)


class TomographyError(ValueError):
    pass


def measurement_operator(setting: Setting) -> np.ndarray:
    return np.kron(qs.projector(setting[0]), qs.projector(setting[1]))


def simulate_tomography(rho, shots_per_setting: float, seed: int, settings: Sequence[Setting] = TOMOGRAPHY_16) -> BasisCounts:
    """Poisson counts with mean shots * Tr(rho P_a (x) P_b) per setting."""
    if shots_per_setting <= 0:
        raise ValueError("shots_per_setting must be positive")
    return sample_counts(rho, settings, shots_per_setting, seed)


def _design(counts: BasisCounts) -> tuple[list[Setting], np.ndarray, np.ndarray, np.ndarray]:
    settings = counts.settings
    ops = np.array([measurement_operator(s) for s in settings])
    n = np.array([counts.count(*s) for s in settings])
    d = np.array([counts.duration(*s) for s in settings])
    return settings, ops, n, d


def linear_inversion(counts: BasisCounts) -> np.ndarray:
    """Unit-trace Hermitian estimate solving rate_s = Tr(X M_s) in least squares.

    Exact for a complete set of 16 settings; with more settings it is the
    least-squares solution.  The result need not be positive semidefinite.
    """
    counts.require(TOMOGRAPHY_16)
    _, ops, n, d = _design(counts)
    # Tr(M_s B_m) with X = sum_m c_m B_m / 4
    a = np.einsum("sij,mji->sm", ops, _PAULI_PRODUCTS).real / 4
    if np.linalg.matrix_rank(a) < 16:
        raise TomographyError("measurement settings are not informationally complete")
    coef, *_ = np.linalg.lstsq(a, n / d, rcond=None)
    x = np.einsum("m,mij->ij", coef, _PAULI_PRODUCTS) / 4
    tr = np.trace(x).real
    if tr <= 0:
        raise TomographyError("linear inversion produced a non-positive trace")
    x = x / tr
    return (x + x.conj().T) / 2


def project_psd(m: np.ndarray) -> np.ndarray:
    """Clamp negative eigenvalues to zero and renormalize."""
    lam, vec = np.linalg.eigh((m + m.conj().T) / 2)
    lam = np.clip(lam, 0, None)
    if lam.sum() <= 0:
        return np.eye(4, dtype=complex) / 4
    out = (vec * lam) @ vec.conj().T
    return out / np.trace(out).real


def t_from_params(x: np.ndarray) -> np.ndarray:
    """Lower-triangular T from 16 reals: 4 real diagonal, 6 complex off-diagonal."""
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = x[:4]
    t[_OFFDIAG] = x[4:10] + 1j * x[10:16]
    return t


def params_from_rho(rho: np.ndarray) -> np.ndarray:
    """Parameters whose T^dagger T equals ``rho`` (rho must be positive definite)."""
    # rho = L L^dagger (Cholesky) -> T = L^dagger is upper; use the reversed order
    # permutation so that T stays lower triangular: rho = T^dagger T with T = P L^dagger P.
    p = np.eye(4)[::-1]
    low = np.linalg.cholesky(p @ rho @ p)
    t = p @ low.conj().T @ p
    x = np.empty(16)
    x[:4] = np.diag(t).real
    x[4:10] = t[_OFFDIAG].real
    x[10:16] = t[_OFFDIAG].imag
    return x


def _grad_params(g: np.ndarray) -> np.ndarray:
    """Map d/dconj(T) (a 4x4 complex array) onto the 16 real parameters."""
    out = np.empty(16)
    out[:4] = 2 * np.diag(g).real
    out[4:10] = 2 * g[_OFFDIAG].real
    out[10:16] = 2 * g[_OFFDIAG].imag
    return out


def poisson_log_likelihood(rho: np.ndarray, counts: BasisCounts) -> float:
    """Poisson log-likelihood with the flux set to its maximum-likelihood value."""
    _, ops, n, d = _design(counts)
    p = np.einsum("ij,sji->s", rho, ops).real * d
    mu = p * n.sum() / p.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(n > 0, n * np.log(mu), 0.0)
    return float(np.sum(term - mu - gammaln(n + 1)))


@dataclass
class MLEResult:
    rho: DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    linear_inversion_rho: np.ndarray
    history: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        lin = self.linear_inversion_rho
        return {
            "rho": self.rho.to_json(),
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "linear_inversion_rho": {
                "basis": list(qs.BASIS),
                "elements": [[[float(z.real), float(z.imag)] for z in row] for row in lin],
            },
        }


class _Deviance:
    """Poisson deviance sum n log(n/mu) - n + mu as a function of T."""

    def __init__(self, counts: BasisCounts):
        _, ops, n, d = _design(counts)
        self.n = n
        self.scale = n.sum()
        self.ops = ops * d[:, None, None]
        self.sat = np.where(n > 0, n * np.log(np.where(n > 0, n, 1.0)), 0.0).sum() - n.sum()

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        t = t_from_params(x)
        rho_u = t.conj().T @ t
        mu = self.scale * np.einsum("ij,sji->s", rho_u, self.ops).real
        mu = np.maximum(mu, 1e-300)
        f = self.sat - np.dot(self.n, np.log(mu)) + mu.sum()
        w = self.scale * (1 - self.n / mu)
        g = t @ np.einsum("s,sij->ij", w, self.ops)
        return float(f), _grad_params(g)


def mle_reconstruct(counts: BasisCounts, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> MLEResult:
    """Maximum-likelihood density matrix from coincidence counts.

    The optimizer (L-BFGS) starts from the PSD-projected linear inversion,
    slightly mixed with white noise so every setting has nonzero probability.
    ``converged`` is False when ``max_iter`` is exhausted.
    """
    counts.require(TOMOGRAPHY_16)
    if counts.total() <= 0:
        raise TomographyError("all counts are zero")
    lin = linear_inversion(counts)
    start = 0.999 * project_psd(lin) + 0.001 * np.eye(4) / 4
    dev = _Deviance(counts)
    x0 = params_from_rho(start)
    # unit scale: sum of mu equals the total counts at the start
    x0 /= math.sqrt(np.einsum("ij,sji->s", start, dev.ops).real.sum())

    history: list[float] = []

    def record(xk):
        history.append(-dev(xk)[0])

    res = minimize(
        dev,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12, "maxcor": 30, "maxls": 50},
    )
    t = t_from_params(res.x)
    rho = DensityMatrix.from_unnormalized(t.conj().T @ t)
    converged = bool(res.success) or res.nit < max_iter
    return MLEResult(
        rho=rho,
        log_likelihood=poisson_log_likelihood(rho.elements, counts),
        iterations=int(res.nit),
        converged=converged,
        linear_inversion_rho=lin,
        history=history,
    )


def nearest_bell(rho) -> tuple[str, float]:
    best = max(qs.BELL_KINDS, key=lambda k: qs.bell_fidelity(rho, k))
    return best, qs.bell_fidelity(rho, best)


def qst_metrics(rho) -> dict[str, float | str]:
    """Purity, von Neumann entropy (bits), Renyi-2 entropies (nats), Bell fidelity."""
    kind, fid = nearest_bell(rho)
    return {
        "purity": qs.purity(rho),
        "von_neumann_bits": qs.von_neumann_entropy(rho),
        "renyi2_a_nats": qs.renyi2_entropy(rho, "A"),
        "renyi2_b_nats": qs.renyi2_entropy(rho, "B"),
        "bell_fidelity": fid,
        "nearest_bell": kind,
    }
