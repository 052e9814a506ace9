import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from entsource import simulation as sim
from entsource.analytic import DetectorParams, RateSet, expected_coincidence_rate, total_efficiency
from entsource.quantum_state import SourceStateModel, werner
from entsource.simulation import CoincidenceCounter, DelayAccumulator, EventStream, Fiber

from conftest import make_config


def brute_force_matches(a, b, offset, window):
    """Reference greedy pairing: each A takes the earliest free B in its window."""
    used = [False] * len(b)
    n = 0
    for ta in a:
        for k, tb in enumerate(b):
            if not used[k] and abs(2 * (tb - ta - offset)) <= window:
                used[k] = True
                n += 1
                break
    return n


def test_coincidence_examples():
    assert sim.count_coincidences(([100], [150]), 200e-12).coincidences == 1
    assert sim.count_coincidences(([100], [500]), 200e-12).coincidences == 0
    assert sim.count_coincidences(([100], [200]), 200e-12).coincidences == 1  # edge is inclusive
    assert sim.count_coincidences(([100], [201]), 200e-12).coincidences == 0
    assert sim.count_coincidences(([100], [450]), 200e-12, offset_ps=300).coincidences == 1


def test_consume_once_and_earliest_partner():
    rec = sim.count_coincidences(([100, 110], [105]), 100e-12)
    assert rec.coincidences == 1
    # the first A takes the earlier B; the second A still finds the later one
    rec = sim.count_coincidences(([100, 130], [90, 140]), 40e-12)
    assert rec.coincidences == 2


def test_unsorted_input_rejected():
    with pytest.raises(ValueError):
        sim.count_coincidences(([5, 3], [1]), 1e-9)
    with pytest.raises(ValueError):
        sim.delay_histogram(([1], [9, 2]), 10, 100)


def test_histogram_bin_width_validation():
    with pytest.raises(ValueError):
        sim.delay_histogram(([1], [2]), 0, 100)


def test_independent_poisson_accidentals():
    rng = np.random.default_rng(42)
    duration_ps = 100 * 10**12
    streams = [np.sort(rng.integers(0, duration_ps, rng.poisson(1e7))) for _ in range(2)]
    rec = sim.count_coincidences(EventStream(streams[0], streams[1], duration_ps), 1e-9)
    expected = 1e5 * 1e5 * 1e-9 * 100
    assert abs(rec.coincidences - expected) < 5 * math.sqrt(expected)
    assert rec.accidental_estimate == pytest.approx(expected, rel=0.01)


def test_dark_counts_only():
    cfg = make_config(
        rates=RateSet(0, 0),
        detector_a=DetectorParams(0.2, dark_rate_hz=1000),
        detector_b=DetectorParams(0.2, dark_rate_hz=1000),
        duration_s=10,
    )
    ev = sim.simulate(cfg)
    for n in (len(ev.a), len(ev.b)):
        assert abs(n - 10_000) < 5 * 100


def test_dead_time_ceiling():
    det = DetectorParams(0.5, dead_time_s=1e-5)
    cfg = make_config(rates=RateSet(1e7, 1e7), detector_a=det, detector_b=det, duration_s=0.1)
    rec = sim.simulate_counts(cfg)
    assert rec.singles_a_hz == pytest.approx(1 / 1e-5, rel=0.03)
    assert rec.singles_a_hz == pytest.approx(1e7 * total_efficiency(0.5, 1e7, 1e-5), rel=0.01)


def test_low_saturation_coincidences_match_closed_form():
    det = DetectorParams(0.2, dead_time_s=1e-9)
    cfg = make_config(rates=RateSet(1e5, 1e5, window_s=1e-9), detector_a=det, detector_b=det, duration_s=2)
    rec = sim.simulate_counts(cfg)
    expected = expected_coincidence_rate(cfg.rates, det, det) * 2
    assert abs(rec.coincidences - expected) < 3 * math.sqrt(expected)


def test_determinism_and_seed_sensitivity():
    cfg = make_config(detector_a=DetectorParams(0.2, dead_time_s=5e-8, dark_rate_hz=500, afterpulse_prob=0.05, afterpulse_tau_s=1e-7, jitter_sigma_s=5e-11))
    assert sim.simulate(cfg) == sim.simulate(cfg)
    assert sim.simulate(cfg) != sim.simulate(replace(cfg, seed=2))


def test_events_in_range_and_dead_time_respected():
    det = DetectorParams(0.3, dead_time_s=2e-7, dark_rate_hz=2e4, afterpulse_prob=0.2, afterpulse_tau_s=3e-7, jitter_sigma_s=1e-10)
    cfg = make_config(rates=RateSet(5e5, 1e6), detector_a=det, detector_b=det, duration_s=0.2)
    ev = sim.simulate(cfg)
    for t in (ev.a, ev.b):
        assert len(t) > 0
        assert t.min() >= 0 and t.max() < cfg.duration_ps
        assert np.diff(t).min() >= 200_000


def test_perfect_link_counts_every_pair():
    cfg = make_config(
        rates=RateSet(1e5, 1e5, window_s=1e-12),
        detector_a=DetectorParams(1.0),
        detector_b=DetectorParams(1.0),
    )
    rec = sim.simulate_counts(cfg)
    assert rec.singles_a == rec.singles_b == rec.coincidences
    assert abs(rec.coincidences - 1e5) < 5 * math.sqrt(1e5)


def test_coincidences_bounded_by_singles():
    det = DetectorParams(0.4, dead_time_s=1e-7, dark_rate_hz=1e5)
    rec = sim.simulate_counts(make_config(rates=RateSet(5e5, 1e6, window_s=5e-9), detector_a=det, detector_b=det, duration_s=0.2))
    assert rec.coincidences <= min(rec.singles_a, rec.singles_b)


def test_afterpulse_cascade_rate():
    # without dead time every accepted event spawns a geometric cascade: rate / (1 - p)
    det = DetectorParams(0.2, dark_rate_hz=1e4, afterpulse_prob=0.2, afterpulse_tau_s=1e-7)
    cfg = make_config(rates=RateSet(0, 0), detector_a=det, detector_b=det, duration_s=5)
    ev = sim.simulate(cfg)
    expected = 1e4 / 0.8 * 5
    assert abs(len(ev.a) - expected) < 5 * math.sqrt(expected / 0.8)


def test_born_rule_ratios():
    state = SourceStateModel(bell_fraction=0.8, depolarized_fraction=0.2)
    cfg = make_config(state=state, detector_a=DetectorParams(1.0), detector_b=DetectorParams(1.0), duration_s=0.5)
    n_hh = sim.simulate_counts(replace(cfg, analyzer_a="H", analyzer_b="H")).coincidences
    n_hv = sim.simulate_counts(replace(cfg, analyzer_a="H", analyzer_b="V", seed=9)).coincidences
    frac = n_hv / (n_hh + n_hv)
    p = 0.2 / 4 / 0.5
    assert abs(frac - p) < 4 * math.sqrt(p * (1 - p) / (n_hh + n_hv))


def test_analyzer_blocks_orthogonal_singles():
    cfg = make_config(state=SourceStateModel(bell_fraction=0.0, impurity_fraction=1.0), analyzer_a="V", duration_s=0.2)
    assert sim.simulate_counts(cfg).singles_a == 0


def test_coincidences_increase_with_transmission_at_low_saturation():
    det = DetectorParams(0.2, dead_time_s=1e-9)
    recs = [
        sim.simulate_counts(make_config(rates=RateSet(1e5, 1e5, g, g), detector_a=det, detector_b=det, seed=k))
        for k, g in enumerate((0.25, 0.5, 1.0))
    ]
    c = [r.coincidences for r in recs]
    assert c[0] < c[1] < c[2]


def test_jitter_limited_peak_width():
    det = DetectorParams(0.2, jitter_sigma_s=42.5e-12)
    cfg = make_config(detector_a=det, detector_b=det, duration_s=5)
    acc = DelayAccumulator(5, 2000)
    sim.simulate_counts(cfg, histogram=acc)
    expected = 2 * math.sqrt(2 * math.log(2)) * math.sqrt(2) * 42.5
    assert acc.hist.fwhm_ps() == pytest.approx(expected, rel=0.1)


def test_flat_histogram_from_uncorrelated_streams():
    rng = np.random.default_rng(3)
    dur = 10 * 10**12
    a = np.sort(rng.integers(0, dur, rng.poisson(1e5 * 10)))
    b = np.sort(rng.integers(0, dur, rng.poisson(1e5 * 10)))
    hist = sim.delay_histogram(EventStream(a, b, dur), 1000, 50_000)
    expected = 1e5 * 1e5 * 1e-9 * 10
    assert abs(hist.counts.mean() - expected) < 5 * math.sqrt(expected / len(hist.counts))


def test_dispersion_broadens_one_arm():
    det = DetectorParams(0.2, jitter_sigma_s=42.5e-12)
    cfg = make_config(detector_a=det, detector_b=det, fiber_b=Fiber(28), source_bandwidth_nm=60, duration_s=4)
    acc = DelayAccumulator(1000, 150_000)
    sim.simulate_counts(cfg, histogram=acc)
    assert acc.hist.fwhm_ps() == pytest.approx(28_560, rel=0.15)


def test_streaming_matches_in_memory(monkeypatch):
    monkeypatch.setattr(sim, "CHUNK_DRAWS", 5_000)
    det = DetectorParams(0.3, dead_time_s=3e-8, dark_rate_hz=1e4, afterpulse_prob=0.1, afterpulse_tau_s=5e-8, jitter_sigma_s=1e-10)
    cfg = make_config(rates=RateSet(2e5, 3e5, window_s=2e-9), detector_a=det, detector_b=det, fiber_b=Fiber(2), source_bandwidth_nm=10, duration_s=0.2, offset_ps=150)
    acc = DelayAccumulator(100, 5000)
    streamed = sim.simulate_counts(cfg, histogram=acc)
    ev = sim.simulate(cfg)
    assert streamed == sim.count_coincidences(ev, cfg.rates.window_s, offset_ps=150)
    np.testing.assert_array_equal(acc.hist.counts, sim.delay_histogram(ev, 100, 5000).counts)


def test_scan_one_by_one_equals_simulate():
    cfg = make_config(duration_s=0.2)
    res = sim.scan_grid(cfg, ("dead_time_ns", [20]), ("attenuation_db", [3]))
    point = sim.set_parameter(sim.set_parameter(cfg, "dead_time_ns", 20), "attenuation_db", 3)
    assert res.records[0][0] == sim.simulate_counts(replace(point, seed=sim.derive_seed(cfg.seed, 0, 0)))


def test_scan_low_rate_grid_matches_closed_form():
    cfg = make_config(rates=RateSet(1e5, 2e5, window_s=1e-9), duration_s=0.5)
    res = sim.scan_grid(cfg, ("dead_time_ns", [1, 10]), ("attenuation_db", [0, 3, 6]), max_workers=2)
    for i, td in enumerate([1, 10]):
        for j, db in enumerate([0, 3, 6]):
            point = sim.set_parameter(sim.set_parameter(cfg, "dead_time_ns", td), "attenuation_db", db)
            exp_c = expected_coincidence_rate(point.rates, point.detector_a, point.detector_b) * 0.5
            g = point.rates.transmissivity_a
            exp_s = 2e5 * g * total_efficiency(0.2, 2e5 * g, td * 1e-9) * 0.5
            rec = res.records[i][j]
            acc = rec.accidental_estimate
            assert abs(rec.coincidences - exp_c - acc) < 3 * math.sqrt(exp_c + acc)
            assert abs(rec.singles_a - exp_s) < 3 * math.sqrt(exp_s)


def test_scan_parallel_matches_serial():
    cfg = make_config(duration_s=0.05)
    axes = (("eta_q", [0.1, 0.5]), ("window_ps", [500, 2000]))
    assert sim.scan_grid(cfg, *axes).records == sim.scan_grid(cfg, *axes, max_workers=3).records


def test_scan_unknown_parameter():
    with pytest.raises(KeyError):
        sim.scan_grid(make_config(), ("colour", [1]), ("eta_q", [0.1]))


def test_config_validation():
    with pytest.raises(ValueError):
        make_config(duration_s=0)
    with pytest.raises(ValueError):
        make_config(seed=-1)
    with pytest.raises(ValueError):
        Fiber(-1)


def test_merge_channels_orders_and_breaks_ties():
    rows = sim.merge_channels(np.array([5, 9]), np.array([5, 7]))
    assert rows == [("A", 5), ("B", 5), ("B", 7), ("A", 9)]


def test_histogram_floor_and_fwhm_helpers():
    counts = np.full(40, 10)
    counts[18:22] = [40, 110, 110, 40]
    h = sim.DelayHistogram(10, -200, counts)
    assert h.floor_level() == 10
    assert h.total == counts.sum()
    # half max 50 is crossed 20/70 of a bin inside the +-15 ps bins
    assert h.fwhm_ps() == pytest.approx(2 * (15 - 10 * 20 / 70), abs=1e-9)
    assert math.isnan(sim.DelayHistogram(10, 0, np.full(5, 3)).fwhm_ps())


# -- properties against brute force -------------------------------------------------

times = st.lists(st.integers(0, 2000), max_size=40).map(sorted)


@given(times, times, st.integers(-100, 100), st.integers(0, 300))
def test_greedy_matches_reference(a, b, offset, window):
    got = sim.count_coincidences((a, b), window * 1e-12, offset_ps=offset).coincidences
    assert got == brute_force_matches(a, b, offset, window)
    assert got <= min(len(a), len(b))


@given(times, times, st.lists(st.integers(0, 2100), max_size=4).map(sorted), st.integers(-50, 50), st.integers(0, 300))
def test_counter_chunking_invariant(a, b, cuts, offset, window):
    whole = sim.count_coincidences((a, b), window * 1e-12, offset_ps=offset).coincidences
    counter = CoincidenceCounter(window, offset)
    a, b = np.array(a, np.int64), np.array(b, np.int64)
    lo = 0
    for cut in cuts + [None]:
        hi = 10**9 if cut is None else cut
        if cut is not None and cut < lo:
            continue
        counter.feed(a[(a >= lo) & (a < hi)], b[(b >= lo) & (b < hi)], cut)
        lo = hi
    assert counter.coincidences == whole


@given(times, times, st.integers(1, 50), st.integers(1, 500))
def test_histogram_counts_all_pairs(a, b, bin_ps, half):
    h = sim.delay_histogram((a, b), bin_ps, (-half, half))
    d = np.subtract.outer(np.array(b), np.array(a)).ravel() if a and b else np.array([])
    inside = d[(d >= -half) & (d < h.hi_ps)] if len(d) else d
    assert h.total == len(inside)
    for x in inside:
        assert h.counts[int((x + half) // bin_ps)] > 0


@given(st.lists(st.integers(0, 10**6), max_size=200).map(sorted), st.integers(0, 5000))
def test_deadtime_gaps(cand, dead):
    from entsource import _kernels

    out, *_ = _kernels.deadtime_filter(np.array(cand, np.int64), np.int64(10**7), np.int64(dead), 0.0, 0.0, np.int64(_kernels.NEVER), np.empty(4, np.int64), 0, 1)
    if len(out) > 1:
        assert np.diff(out).min() >= dead
    # non-paralyzable: the first candidate is always accepted, and any candidate
    # at least T_d after the previous accepted one is accepted
    if cand:
        assert out[0] == cand[0]
