"""Scalar source metrics from direct measurements and tomography.

Data for a report come either from files (count tables and singles scans)
or from a configured experiment, acquired in one of three modes:

* ``monte_carlo``: event-level simulation of every analyzer setting,
* ``sampled``: Poisson counts drawn around the Born-rule expectations,
* ``expected``: the noiseless expectations themselves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import direct
from .analytic import (
    expected_coincidence_rate,
    expected_singles_rate,
    false_coincidence_rate,
    heralding_probability,
    total_efficiency,
)
from .counts import LINEAR_16, TOMOGRAPHY_16, TOMOGRAPHY_36, BasisCounts, MissingSettingsError, Setting, expected_counts
from .direct import SinglesScan
from .quantum_state import partial_trace, projector
from .simulation import ExperimentConfig, derive_seed, simulate_counts
from .tomography import DEFAULT_MAX_ITER, DEFAULT_TOL, MLEResult, mle_reconstruct, qst_metrics

log = logging.getLogger(__name__)

# seed streams for the acquisition steps of one report
_HERALD, _SETTINGS, _SV = 0, 1, 2

# (header, section, key) in the column order of the reference table
TABLE_COLUMNS = (
    ("p", "qst", "purity"),
    ("S[bit]", "qst", "von_neumann_bits"),
    ("Y_A[nat]", "qst", "renyi2_a_nats"),
    ("V_HV", "direct", "V_HV"),
    ("V_DA", "direct", "V_DA"),
    ("QBER", "direct", "QBER"),
    ("H_A", "direct", "H_A"),
    ("H_B", "direct", "H_B"),
    ("SV_max", "direct", "SV_max"),
    ("SV_min", "direct", "SV_min"),
)


@dataclass
class MetricsReport:
    """Direct and tomographic metrics with the parameters they were acquired under.

    Units: S in bits, Renyi-2 entropies in nats, H_A/H_B in bits (max 8);
    all other values are dimensionless.  Unavailable metrics are None.
    """

    direct: dict = field(default_factory=dict)
    qst: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    name: str = ""

    @property
    def converged(self) -> bool:
        return self.details.get("mle", {}).get("converged", True)

    def value(self, section: str, key: str):
        return getattr(self, section).get(key)

    def table_row(self) -> list:
        return [self.value(sec, key) for _, sec, key in TABLE_COLUMNS]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "direct": self.direct,
            "qst": self.qst,
            "details": self.details,
            "provenance": self.provenance,
            "units": {
                "von_neumann_bits": "bit",
                "renyi2_a_nats": "nat",
                "renyi2_b_nats": "nat",
                "H_A": "bit",
                "H_B": "bit",
            },
        }


def render_table(reports: Sequence[MetricsReport], digits: int = 2) -> str:
    """Aligned text table: one row per report, columns as in TABLE_COLUMNS."""
    headers = ["source"] + [h for h, _, _ in TABLE_COLUMNS]
    rows = []
    for i, rep in enumerate(reports):
        cells = [rep.name or f"#{i + 1}"]
        for v in rep.table_row():
            cells.append("-" if v is None else f"{v:.{digits}f}")
        rows.append(cells)
    widths = [max(len(r[c]) for r in [headers] + rows) for c in range(len(headers))]
    fmt = lambda cells: "  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(cells, widths)))  # noqa: E731
    lines = [fmt(headers), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


# -- acquisition -----------------------------------------------------------------


def acquire_counts(
    exp: ExperimentConfig,
    settings: Sequence[Setting],
    mode: str,
    *,
    setting_duration_s: float = 1.0,
    shots: float = 1e5,
    seed: int = 0,
) -> BasisCounts:
    """Coincidence table over ``settings`` for the configured source."""
    if mode == "monte_carlo":
        counts, durations, singles = {}, {}, {}
        for k, (a, b) in enumerate(settings):
            cfg = replace(exp, analyzer_a=a, analyzer_b=b, duration_s=setting_duration_s, seed=derive_seed(seed, _SETTINGS, k))
            rec = simulate_counts(cfg)
            counts[(a, b)] = rec.coincidences
            durations[(a, b)] = setting_duration_s
            singles[(a, b)] = (rec.singles_a, rec.singles_b)
        return BasisCounts(counts, durations, singles, exp.rates.window_s)
    rho = exp.state.to_density_matrix()
    if mode == "expected":
        return expected_counts(rho, settings, shots)
    if mode == "sampled":
        rng = np.random.default_rng(derive_seed(seed, _SETTINGS))
        mean = expected_counts(rho, settings, shots)
        return BasisCounts({s: int(rng.poisson(mean.count(*s))) for s in settings})
    raise ValueError(f"unknown acquisition mode {mode!r}")


def _arm_efficiency(exp: ExperimentConfig, arm: str) -> float:
    """End-to-end efficiency gamma * eta_T of one arm."""
    r = exp.rates
    gamma, det = (r.transmissivity_a, exp.detector_a) if arm == "A" else (r.transmissivity_b, exp.detector_b)
    return gamma * total_efficiency(det.eta_q, r.total_rate_hz * gamma, det.dead_time_s)


def acquire_heralding(exp: ExperimentConfig, mode: str, *, setting_duration_s: float = 1.0, seed: int = 0) -> dict:
    """Heralding estimate from a no-polarizer run of the configured source."""
    r = exp.rates
    if mode == "monte_carlo":
        cfg = replace(exp, analyzer_a=None, analyzer_b=None, duration_s=setting_duration_s, seed=derive_seed(seed, _HERALD))
        rec = simulate_counts(cfg)
        rc, ra, rb = rec.coincidence_hz, rec.singles_a_hz, rec.singles_b_hz
    else:
        ra = expected_singles_rate(r, exp.detector_a, "A")
        rb = expected_singles_rate(r, exp.detector_b, "B")
        rc = expected_coincidence_rate(r, exp.detector_a, exp.detector_b) + false_coincidence_rate(ra, rb, r.window_s)
        if mode == "sampled":
            rng = np.random.default_rng(derive_seed(seed, _HERALD))
            t = setting_duration_s
            rc, ra, rb = (rng.poisson(x * t) / t for x in (rc, ra, rb))
    eta_a, eta_b = _arm_efficiency(exp, "A"), _arm_efficiency(exp, "B")
    out = {
        "coincidence_hz": rc,
        "singles_a_hz": ra,
        "singles_b_hz": rb,
        "window_s": r.window_s,
        "eta_total_a": eta_a,
        "eta_total_b": eta_b,
        "source_heralding": r.heralding,
    }
    try:
        out["h"] = heralding_probability(rc, ra, rb, r.window_s, eta_a, eta_b)
        out["negative"] = out["h"] < 0
    except ZeroDivisionError as exc:
        out["h"] = None
        out["error"] = str(exc)
    return out


def acquire_singles_scans(
    exp: ExperimentConfig,
    mode: str,
    *,
    arm: str = "A",
    n_angles: int = 8,
    setting_duration_s: float = 1.0,
    shots: float = 1e5,
    seed: int = 0,
    pc_search=None,
) -> tuple[list[SinglesScan], direct.SVExtremes]:
    """Polarizer-rotation singles scans at the controller settings that
    extremize single-photon visibility for the model state."""
    arm = arm.upper()
    ext = direct.sv_extremize(exp.state, arm, pc_search)
    angles = [180.0 * k / n_angles for k in range(n_angles)]
    scans = []
    for which, (label, pc) in enumerate((("sv_max", ext.argmax_pc), ("sv_min", ext.argmin_pc))):
        field_name = "pre_rotation_a" if arm == "A" else "pre_rotation_b"
        state = replace(exp.state, **{field_name: pc @ np.asarray(getattr(exp.state, field_name))})
        red = partial_trace(state.to_density_matrix(), arm)
        rng = np.random.default_rng(derive_seed(seed, _SV, which))
        samples = []
        for k, theta in enumerate(angles):
            if mode == "monte_carlo":
                analyzers = {"analyzer_a": theta, "analyzer_b": None} if arm == "A" else {"analyzer_a": None, "analyzer_b": theta}
                cfg = replace(exp, state=state, duration_s=setting_duration_s, seed=derive_seed(seed, _SV, which, k), **analyzers)
                rec = simulate_counts(cfg)
                n = rec.singles_a if arm == "A" else rec.singles_b
            else:
                mean = shots * float(np.trace(red @ projector(theta)).real)
                n = mean if mode == "expected" else int(rng.poisson(mean))
            samples.append((theta, n))
        scans.append(SinglesScan(arm, tuple(samples), label))
    return scans, ext


# -- metrics ---------------------------------------------------------------------


def _try(fn, *args):
    try:
        return fn(*args), None
    except (MissingSettingsError, ZeroDivisionError, ValueError) as exc:
        return None, str(exc)


def _basis_stderr(counts: BasisCounts, basis: str, expected: str) -> float:
    j, k = {"HV": ("H", "V"), "DA": ("D", "A")}[basis]
    se = [direct.visibility_stderr(counts, x, expected) for x in (j, k)]
    return 0.5 * math.hypot(*se)


def compute_report(
    counts: BasisCounts,
    scans: Sequence[SinglesScan] = (),
    heralding: dict | None = None,
    *,
    expected_state: str = "phi+",
    subtract_accidentals: bool = False,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    name: str = "",
    provenance: dict | None = None,
) -> MetricsReport:
    """All available metrics from a count table and optional singles scans.

    Direct metrics use the linear {H,V,D,A} settings; tomography uses every
    setting present once the {H,V,D,R} set is complete.  Metrics whose
    settings are missing are reported as None with the reason in ``details``.
    """
    unavailable = {}
    if subtract_accidentals:
        counts = counts.subtract_accidentals()
    rep = MetricsReport(name=name, provenance=dict(provenance or {}))
    rep.provenance["subtract_accidentals"] = subtract_accidentals
    rep.provenance["expected_state"] = expected_state

    h = heralding.get("h") if heralding else None
    rep.direct["h"] = h
    if heralding:
        rep.details["heralding"] = heralding

    for basis in ("HV", "DA"):
        v, err = _try(direct.average_visibility, counts, basis, expected_state)
        rep.direct[f"V_{basis}"] = v
        if err:
            unavailable[f"V_{basis}"] = err
        else:
            rep.details.setdefault("visibility_stderr", {})[basis] = _basis_stderr(counts, basis, expected_state)
    rep.direct["QBER"], err = _try(direct.qber, counts, expected_state)
    if err:
        unavailable["QBER"] = err
    for side in ("A", "B"):
        ent, err = _try(direct.coincidence_entropies, counts, side)
        rep.direct[f"H_{side}"] = ent.total if ent else None
        if ent:
            rep.details.setdefault("entropies", {})[side] = ent.to_json()
        else:
            unavailable[f"H_{side}"] = err

    sv = {}
    for scan in scans:
        value, err = _try(direct.single_photon_visibility, scan)
        if err:
            unavailable[f"SV[{scan.arm}/{scan.pc_setting}]"] = err
        else:
            sv[f"{scan.arm}/{scan.pc_setting}"] = value
    rep.direct["SV_max"] = max(sv.values()) if sv else None
    rep.direct["SV_min"] = min(sv.values()) if sv else None
    if sv:
        rep.details["single_photon_visibility"] = sv
    if not scans:
        unavailable["SV"] = "no singles scans"

    mle, err = _try(_reconstruct, counts, max_iter, tol)
    if mle is None:
        unavailable["qst"] = err
        rep.qst = {k: None for k in ("purity", "von_neumann_bits", "renyi2_a_nats", "renyi2_b_nats", "bell_fidelity")}
    else:
        rep.qst = qst_metrics(mle.rho)
        rep.details["mle"] = {
            "converged": mle.converged,
            "iterations": mle.iterations,
            "log_likelihood": mle.log_likelihood,
            "settings": len(counts.settings),
        }
        rep.details["rho"] = mle.rho.to_json()
        born = expected_counts(mle.rho, LINEAR_16, 1.0)
        rep.details["qst_visibility"] = {b: direct.average_visibility(born, b, expected_state) for b in ("HV", "DA")}
    if unavailable:
        rep.details["unavailable"] = unavailable
    return rep


def _reconstruct(counts: BasisCounts, max_iter: int, tol: float) -> MLEResult:
    counts.require(TOMOGRAPHY_16)
    return mle_reconstruct(counts, max_iter=max_iter, tol=tol)


def report_for_experiment(
    exp: ExperimentConfig,
    *,
    mode: str = "monte_carlo",
    setting_duration_s: float = 1.0,
    shots: float = 1e5,
    seed: int = 0,
    expected_state: str = "phi+",
    subtract_accidentals: bool = False,
    sv_angles: int = 8,
    name: str = "",
    provenance: dict | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> tuple[MetricsReport, BasisCounts, list[SinglesScan]]:
    """Acquire all 36 settings, a heralding run and two singles scans, then report."""
    counts = acquire_counts(exp, TOMOGRAPHY_36, mode, setting_duration_s=setting_duration_s, shots=shots, seed=seed)
    herald = acquire_heralding(exp, mode, setting_duration_s=setting_duration_s, seed=seed)
    scans, ext = acquire_singles_scans(exp, mode, n_angles=sv_angles, setting_duration_s=setting_duration_s, shots=shots, seed=seed)
    prov = {
        "mode": mode,
        "seed": seed,
        "window_s": exp.rates.window_s,
        "settings": len(TOMOGRAPHY_36),
    }
    if mode == "monte_carlo":
        prov["setting_duration_s"] = setting_duration_s
    else:
        prov["shots_per_setting"] = shots
    prov.update(provenance or {})
    rep = compute_report(
        counts,
        scans,
        herald,
        expected_state=expected_state,
        subtract_accidentals=subtract_accidentals and mode == "monte_carlo",
        max_iter=max_iter,
        tol=tol,
        name=name,
        provenance=prov,
    )
    rep.details["sv_model"] = {"sv_max": ext.sv_max, "sv_min": ext.sv_min}
    return rep, counts, scans
