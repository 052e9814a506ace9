"""End-to-end acceptance checks.

Each test records one PASS/FAIL line (collected in the terminal summary)
and then asserts the same condition, so a failing criterion also fails the
test run.  Tolerances are fixed here and are not tuned to the outcome.
"""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from entsource import direct
from entsource.analytic import (
    DetectorParams,
    RateSet,
    expected_coincidence_rate,
    expected_singles_rate,
    false_coincidence_rate,
)
from entsource.cli import main
from entsource.config import load_config
from entsource.counts import LINEAR_16, TOMOGRAPHY_16, TOMOGRAPHY_36, expected_counts, sample_counts
from entsource.io import read_matrix
from entsource.presets import QUALITY_ORDER
from entsource.quantum_state import BELL_KINDS, bell_state, fidelity, werner
from entsource.report import report_for_experiment
from entsource.simulation import (
    DelayAccumulator,
    ExperimentConfig,
    scan_grid,
    simulate_counts,
)
from entsource.tomography import mle_reconstruct, simulate_tomography

from conftest import random_density

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

pytestmark = pytest.mark.slow


def symmetric(pair_hz, total_hz, eta, dead_s=0.0, **kw):
    det = DetectorParams(eta_q=eta, dead_time_s=dead_s)
    rates = RateSet(pair_rate_hz=pair_hz, total_rate_hz=total_hz, window_s=kw.pop("window_s", 1e-9))
    return ExperimentConfig(rates=rates, detector_a=det, detector_b=det, **kw)


def test_c01_singles_saturation_curve(acceptance):
    rate, eta = 1e6, 0.2
    rows, ok = [], True
    start = time.perf_counter()
    for k, x in enumerate((0.01, 0.1, 1.0, 10.0)):
        exp = symmetric(rate, rate, eta, x / (rate * eta), duration_s=1.0, seed=100 + k)
        rec = simulate_counts(exp)
        expected = expected_singles_rate(exp.rates, exp.detector_a, "A") * exp.duration_s
        assert expected == pytest.approx(eta / (1 + x) * rate)
        for n in (rec.singles_a, rec.singles_b):
            z = (n - expected) / math.sqrt(expected)
            ok &= abs(z) <= 3
            rows.append(f"x={x:g}:{z:+.2f}s")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    assert acceptance(1, ok, f"singles z-scores {' '.join(rows)}; runtime {elapsed:.1f} s (< 30 s)")


def test_c02_coincidence_rate_grid(acceptance):
    cells, ok = [], True
    for i, dead_ns in enumerate((10, 100)):
        for j, db in enumerate((0, 3, 6, 10)):
            exp = symmetric(1e5, 2e5, 0.2, dead_ns * 1e-9, duration_s=2.0, seed=200 + 10 * i + j)
            g = 10 ** (-db / 10)
            exp = replace(exp, rates=replace(exp.rates, transmissivity_a=g, transmissivity_b=g))
            rec = simulate_counts(exp)
            mu = expected_coincidence_rate(exp.rates, exp.detector_a, exp.detector_b) * exp.duration_s
            z = (rec.coincidences - mu) / math.sqrt(mu)
            ok &= abs(z) <= 3
            cells.append(f"{dead_ns}ns/{db}dB:{z:+.2f}s")
    assert acceptance(2, ok, "coincidence z-scores " + " ".join(cells))


def test_c03_accidental_floor(acceptance):
    cells, ok = [], True
    for k, window in enumerate((0.1e-9, 1e-9, 10e-9)):
        # no pairs at all: every coincidence is accidental
        exp = symmetric(0.0, 1e6, 0.2, duration_s=10.0, seed=300 + k, window_s=window)
        rec = simulate_counts(exp)
        mu = false_coincidence_rate(rec.singles_a_hz, rec.singles_b_hz, window) * exp.duration_s
        assert mu == pytest.approx(rec.accidental_estimate)
        z = (rec.coincidences - mu) / math.sqrt(mu)
        ok &= abs(z) <= 5
        cells.append(f"dt={window * 1e9:g}ns:{rec.coincidences}/{mu:.1f} ({z:+.2f}s)")
    assert acceptance(3, ok, "accidentals " + " ".join(cells))


def test_c04_desync_rising_segment(acceptance):
    run = load_config(CONFIGS / "desync.yaml")
    exp, spec = run.experiment, run.scan
    dbs = spec.axis2[1]
    assert spec.axis2[0] == "attenuation_db" and dbs[0] == 0
    res = scan_grid(exp, spec.axis1, spec.axis2)
    coinc = res.matrix("coincidences")
    ok, rows = True, []
    for i, dead_us in enumerate(spec.axis1[1]):
        x = exp.rates.total_rate_hz * exp.detector_a.eta_q * dead_us * 1e-6
        assert x >= 5
        rising = coinc[i, 1] > coinc[i, 0]
        ok &= bool(rising)
        rows.append(f"x={x:g}: {' '.join(str(int(c)) for c in coinc[i, :5])}...")
    assert acceptance(4, ok, "coincidences from 0 dB " + "; ".join(rows))


def test_c05_dispersion_broadening(acceptance):
    run = load_config(CONFIGS / "dispersion.yaml")
    exp, h = run.experiment, run.histogram
    acc = DelayAccumulator(h.bin_width_ps, h.range_ps)
    simulate_counts(exp, histogram=acc)
    broad = acc.hist.fwhm_ps()

    narrow_exp = replace(exp, fiber_b=replace(exp.fiber_b, length_km=0.0), duration_s=2.0)
    narrow_acc = DelayAccumulator(5, (-1000, 1000))
    simulate_counts(narrow_exp, histogram=narrow_acc)
    narrow = narrow_acc.hist.fwhm_ps()

    ok = abs(broad - 28_560) <= 0.15 * 28_560 and broad >= 100 * narrow
    assert acceptance(5, ok, f"FWHM {broad:.0f} ps (28560 +-15%), zero-fiber {narrow:.0f} ps, ratio {broad / narrow:.0f} (>= 100)")


def test_c06_metric_ideals(acceptance):
    exp = symmetric(1e5, 1e5, 0.2, seed=6)
    rep, _, _ = report_for_experiment(exp, mode="expected", shots=1e5)
    d, q = rep.direct, rep.qst
    checks = {
        "V_HV": abs(d["V_HV"] - 1) <= 1e-9,
        "V_DA": abs(d["V_DA"] - 1) <= 1e-9,
        "QBER": abs(d["QBER"]) <= 1e-9,
        "H_A": abs(d["H_A"] - 8) <= 1e-9,
        "H_B": abs(d["H_B"] - 8) <= 1e-9,
        "SV": abs(d["SV_max"]) <= 1e-9 and abs(d["SV_min"]) <= 1e-9,
        "purity": abs(q["purity"] - 1) <= 1e-6,
        "S": abs(q["von_neumann_bits"]) <= 1e-6,
        "Y_A": abs(q["renyi2_a_nats"] - math.log(2)) <= 1e-9,
    }
    worst = 0.0
    for seed in range(1000):
        rho = random_density(seed, rank=1 + seed % 4)
        counts = expected_counts(rho, LINEAR_16, 1.0)
        for side in "AB":
            worst = max(worst, direct.coincidence_entropies(counts, side).total)
    checks["H<=8 (1000 states)"] = worst <= 8 + 1e-12
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    detail = (
        f"V_HV={d['V_HV']:.12f} QBER={d['QBER']:.1e} H_A={d['H_A']:.9f} SV_max={d['SV_max']:.1e} "
        f"p={q['purity']:.9f} S={q['von_neumann_bits']:.1e} |Y_A-ln2|={abs(q['renyi2_a_nats'] - math.log(2)):.1e} "
        f"max H over random states {worst:.4f}"
    )
    if failed:
        detail += f"; failed: {', '.join(failed)}"
    assert acceptance(6, ok, detail)


def test_c07_qber_visibility_relation(acceptance):
    cells, ok = [], True
    for k, p in enumerate((0.0, 0.25, 0.5, 0.75, 1.0)):
        rho = werner(p)
        # scale so that every linear setting averages 1e5 coincidences
        born = expected_counts(rho, LINEAR_16, 1.0)
        shots = 1e5 * len(LINEAR_16) / born.total()
        counts = sample_counts(rho, LINEAR_16, shots, seed=700 + k)
        qber = direct.qber(counts, "phi+")
        ok &= abs(qber - (1 - p) / 2) <= 0.01
        cells.append(f"p={p:g}:{qber:.4f}/{(1 - p) / 2:.3f}")
    assert acceptance(7, ok, "QBER measured/expected " + " ".join(cells))


def test_c08_tomography_round_trip(acceptance):
    states = {k: bell_state(k) for k in BELL_KINDS}
    states.update({"werner0.3": werner(0.3), "werner0.7": werner(0.7)})
    cells, ok, slowest = [], True, 0.0
    for k, (name, rho) in enumerate(states.items()):
        counts = simulate_tomography(rho, 1e5, seed=800 + k)
        t0 = time.perf_counter()
        res = mle_reconstruct(counts)
        slowest = max(slowest, time.perf_counter() - t0)
        f_noisy = fidelity(res.rho, rho)
        t0 = time.perf_counter()
        exact = mle_reconstruct(expected_counts(rho, TOMOGRAPHY_16, 1e5))
        slowest = max(slowest, time.perf_counter() - t0)
        f_exact = fidelity(exact.rho, rho)
        ok &= f_noisy >= 0.99 and f_exact >= 1 - 1e-6 and res.converged and exact.converged
        cells.append(f"{name}:{f_noisy:.5f}/1-{1 - f_exact:.1e}")
    ok &= slowest < 10
    assert acceptance(8, ok, f"fidelity sampled/noiseless {' '.join(cells)}; slowest {slowest:.2f} s (< 10 s)")


def test_c09_preset_ordering(acceptance, tmp_path):
    reports = []
    for name in QUALITY_ORDER:
        run = load_config(CONFIGS / f"preset_{name}.yaml")
        m = run.metrics
        rep, counts, _ = report_for_experiment(
            run.experiment,
            mode=m.mode,
            setting_duration_s=m.setting_duration_s,
            shots=m.shots_per_setting,
            seed=run.seed,
            subtract_accidentals=m.subtract_accidentals,
            sv_angles=m.sv_angles,
            name=name,
        )
        assert m.mode == "monte_carlo"
        reports.append(rep)

    def series(section, key):
        return [r.value(section, key) for r in reports]

    def strictly(values, sign):
        return all(sign * (b - a) > 0 for a, b in zip(values, values[1:]))

    order = {
        "purity down": strictly(series("qst", "purity"), -1),
        "S up": strictly(series("qst", "von_neumann_bits"), +1),
        "V_HV down": strictly(series("direct", "V_HV"), -1),
        "V_DA down": strictly(series("direct", "V_DA"), -1),
        "QBER up": strictly(series("direct", "QBER"), +1),
        "H_A down": strictly(series("direct", "H_A"), -1),
        "H_B down": strictly(series("direct", "H_B"), -1),
    }
    worst_sigma = 0.0
    for rep in reports:
        for basis in ("HV", "DA"):
            diff = abs(rep.details["qst_visibility"][basis] - rep.direct[f"V_{basis}"])
            worst_sigma = max(worst_sigma, diff / rep.details["visibility_stderr"][basis])
    order["QST vs direct V within 3 SE"] = worst_sigma <= 3
    failed = [k for k, v in order.items() if not v]
    fmt = lambda xs: "/".join(f"{x:.3f}" for x in xs)  # noqa: E731
    detail = (
        f"purity {fmt(series('qst', 'purity'))} S {fmt(series('qst', 'von_neumann_bits'))} "
        f"V_HV {fmt(series('direct', 'V_HV'))} QBER {fmt(series('direct', 'QBER'))} "
        f"H_A {fmt(series('direct', 'H_A'))}; QST-direct V gap <= {worst_sigma:.2f} SE"
    )
    if failed:
        detail += f"; failed: {', '.join(failed)}"
    assert acceptance(9, not failed, detail)


DETERMINISM_CONFIG = """\
seed: 99
experiment:
  duration_ms: 20
  source:
    pair_rate_hz: 1.0e5
    total_rate_hz: 1.5e5
    state: {preset: medium}
  arm_a:
    detector: &det {efficiency: 0.2, dead_time_ns: 50, dark_rate_hz: 500, afterpulse_prob: 0.02, afterpulse_tau_ns: 100, jitter_ps: 40}
  arm_b:
    fiber_length_km: 2
    detector: *det
  coincidence: {window_ns: 1}
scan:
  axis1: {parameter: dead_time_ns, values: [10, 100]}
  axis2: {parameter: attenuation_db, values: [0, 3]}
  workers: 2
metrics: {mode: monte_carlo, setting_duration_ms: 20}
tomography: {mode: sampled, shots_per_setting: 1.0e4}
"""


def test_c10_determinism(acceptance, tmp_path):
    cfg = tmp_path / "det.yaml"
    cfg.write_text(DETERMINISM_CONFIG)
    commands = {
        "simulate": lambda out: ["simulate", "--config", str(cfg), "--out", out],
        "analyze": lambda out: ["analyze", str(tmp_path / "run1" / "simulate" / "events.csv"), "--config", str(cfg), "--out", out],
        "scan": lambda out: ["scan", "--config", str(cfg), "--out", out],
        "metrics": lambda out: ["metrics", "--config", str(cfg), "--out", out],
        "tomography": lambda out: ["tomography", "--config", str(cfg), "--out", out],
    }
    mismatched, files = [], 0
    for run in ("run1", "run2"):
        for name, argv in commands.items():
            assert main(argv(str(tmp_path / run / name))) == 0
    for name in commands:
        first = sorted((tmp_path / "run1" / name).iterdir())
        second = sorted((tmp_path / "run2" / name).iterdir())
        assert [p.name for p in first] == [p.name for p in second]
        for a, b in zip(first, second):
            files += 1
            if a.read_bytes() != b.read_bytes():
                mismatched.append(f"{name}/{a.name}")
    ok = not mismatched
    detail = f"{files} output files across {len(commands)} commands compared byte for byte"
    if mismatched:
        detail += f"; differing: {', '.join(mismatched)}"
    assert acceptance(10, ok, detail)
