"""Event-level Monte Carlo of a pair source, two lossy arms and two detectors.

Events are generated chunk by chunk so long runs never hold the full stream
in memory.  Each chunk is finalized up to a time boundary shared by both
channels; coincidence counting and delay histogramming consume the same
chunks through resumable accumulators.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .analytic import DetectorParams, RateSet, db_to_transmissivity
from .quantum_state import Analyzer, SourceStateModel, partial_trace, projector

PS = 1e12
FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))
# Gaussian delays are truncated here so chunk boundaries can be finalized.
CLIP_SIGMAS = 8.0
CHUNK_DRAWS = 1_000_000


@dataclass(frozen=True)
class Fiber:
    length_km: float = 0.0
    dispersion_ps_per_km_nm: float = 17.0

    def __post_init__(self):
        if self.length_km < 0 or self.dispersion_ps_per_km_nm < 0:
            raise ValueError("fiber length and dispersion must be nonnegative")


@dataclass(frozen=True)
class ExperimentConfig:
    state: SourceStateModel = field(default_factory=SourceStateModel)
    rates: RateSet = field(default_factory=lambda: RateSet(pair_rate_hz=1e5, total_rate_hz=2e5))
    detector_a: DetectorParams = field(default_factory=DetectorParams)
    detector_b: DetectorParams = field(default_factory=DetectorParams)
    fiber_a: Fiber = field(default_factory=Fiber)
    fiber_b: Fiber = field(default_factory=Fiber)
    source_bandwidth_nm: float = 0.0
    analyzer_a: Analyzer = None
    analyzer_b: Analyzer = None
    duration_s: float = 1.0
    seed: int = 0
    offset_ps: int = 0

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if self.source_bandwidth_nm < 0:
            raise ValueError("source_bandwidth_nm must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def duration_ps(self) -> int:
        return int(round(self.duration_s * PS))

    @property
    def window_ps(self) -> int:
        return int(round(self.rates.window_s * PS))


class DetectionEvent(NamedTuple):
    channel: str
    time_ps: int


@dataclass
class EventStream:
    """Accepted detections per channel, int64 ps, sorted ascending."""

    a: np.ndarray
    b: np.ndarray
    duration_ps: int

    def __iter__(self) -> Iterator[DetectionEvent]:
        for ch, t in merge_channels(self.a, self.b):
            yield DetectionEvent(ch, t)

    def __eq__(self, other):
        return (
            isinstance(other, EventStream)
            and self.duration_ps == other.duration_ps
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )


def merge_channels(a: np.ndarray, b: np.ndarray) -> list[tuple[str, int]]:
    """Time-ordered (channel, time) rows; A wins ties."""
    times = np.concatenate([a, b])
    chans = np.concatenate([np.zeros(len(a), np.int8), np.ones(len(b), np.int8)])
    order = np.lexsort((chans, times))
    labels = ("A", "B")
    return [(labels[c], int(t)) for c, t in zip(chans[order], times[order])]


@dataclass(frozen=True)
class CountsRecord:
    singles_a: int
    singles_b: int
    coincidences: int
    duration_s: float
    window_s: float

    @property
    def accidental_estimate(self) -> float:
        """Expected accidental coincidences R_MA R_MB dt T."""
        if self.duration_s <= 0:
            return 0.0
        return self.singles_a * self.singles_b * self.window_s / self.duration_s

    @property
    def singles_a_hz(self) -> float:
        return self.singles_a / self.duration_s

    @property
    def singles_b_hz(self) -> float:
        return self.singles_b / self.duration_s

    @property
    def coincidence_hz(self) -> float:
        return self.coincidences / self.duration_s

    def to_json(self) -> dict:
        return {
            "singles_a": self.singles_a,
            "singles_b": self.singles_b,
            "coincidences": self.coincidences,
            "accidental_estimate": self.accidental_estimate,
            "duration_s": self.duration_s,
            "window_s": self.window_s,
        }


@dataclass
class DelayHistogram:
    bin_width_ps: int
    lo_ps: int
    counts: np.ndarray

    @property
    def hi_ps(self) -> int:
        return self.lo_ps + self.bin_width_ps * len(self.counts)

    @property
    def edges_ps(self) -> np.ndarray:
        return self.lo_ps + self.bin_width_ps * np.arange(len(self.counts) + 1)

    @property
    def centers_ps(self) -> np.ndarray:
        return self.lo_ps + self.bin_width_ps * (np.arange(len(self.counts)) + 0.5)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def floor_level(self, edge_fraction: float = 0.1) -> float:
        """Median count of the outermost bins on both sides."""
        n = len(self.counts)
        k = max(1, int(n * edge_fraction))
        return float(np.median(np.concatenate([self.counts[:k], self.counts[-k:]])))

    def subtract_floor(self, floor: float | None = None) -> np.ndarray:
        floor = self.floor_level() if floor is None else floor
        return self.counts - floor

    def fwhm_ps(self, floor: float | None = None) -> float:
        """Full width at half maximum of the peak above the floor.

        Half-maximum crossings are linearly interpolated between bins.
        Returns nan when there is no peak above the floor.
        """
        y = self.subtract_floor(floor).astype(float)
        if len(y) == 0:
            return math.nan
        k = int(np.argmax(y))
        half = y[k] / 2
        if half <= 0:
            return math.nan
        x = self.centers_ps
        left = k
        while left > 0 and y[left - 1] > half:
            left -= 1
        right = k
        while right < len(y) - 1 and y[right + 1] > half:
            right += 1
        if left == 0 or right == len(y) - 1:
            return math.nan
        xl = x[left - 1] + (half - y[left - 1]) / (y[left] - y[left - 1]) * self.bin_width_ps
        xr = x[right] + (y[right] - half) / (y[right] - y[right + 1]) * self.bin_width_ps
        return float(xr - xl)


# -- generation --------------------------------------------------------------


@dataclass(frozen=True)
class _ArmModel:
    gamma: float
    eta: float
    delay_per_nm_ps: float
    jitter_ps: float
    dark_hz: float
    dead_ps: int
    ap_prob: float
    ap_tau_ps: float
    single_pass_prob: float

    def min_delay_ps(self, sigma_nm: float) -> float:
        return -CLIP_SIGMAS * (self.delay_per_nm_ps * sigma_nm + self.jitter_ps)


def _arm_model(det: DetectorParams, fiber: Fiber, gamma: float, pass_prob: float) -> _ArmModel:
    return _ArmModel(
        gamma=gamma,
        eta=det.eta_q,
        delay_per_nm_ps=fiber.dispersion_ps_per_km_nm * fiber.length_km,
        jitter_ps=det.jitter_sigma_s * PS,
        dark_hz=det.dark_rate_hz,
        dead_ps=int(round(det.dead_time_s * PS)),
        ap_prob=det.afterpulse_prob,
        ap_tau_ps=det.afterpulse_tau_s * PS,
        single_pass_prob=pass_prob,
    )


def _pair_outcome_probs(config: ExperimentConfig) -> np.ndarray:
    """Probabilities of (both pass, A only, B only, neither) at the analyzers."""
    rho = config.state.to_density_matrix().elements
    pa, pb = projector(config.analyzer_a), projector(config.analyzer_b)
    eye = np.eye(2)
    probs = np.array(
        [
            np.trace(rho @ np.kron(pa, pb)).real,
            np.trace(rho @ np.kron(pa, eye - pb)).real,
            np.trace(rho @ np.kron(eye - pa, pb)).real,
            np.trace(rho @ np.kron(eye - pa, eye - pb)).real,
        ]
    )
    probs = np.clip(probs, 0, None)
    return probs / probs.sum()


def _single_pass_prob(config: ExperimentConfig, side: str) -> float:
    red = partial_trace(config.state.to_density_matrix(), side)
    analyzer = config.analyzer_a if side == "A" else config.analyzer_b
    return float(np.clip(np.trace(red @ projector(analyzer)).real, 0, 1))


def _gauss(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    z = rng.standard_normal(n)
    np.clip(z, -CLIP_SIGMAS, CLIP_SIGMAS, out=z)
    return z * sigma


def _arm_times(rng, arm: _ArmModel, t_emit, detuning_nm, passed) -> np.ndarray:
    """Photon arrival times of surviving, detected photons in one arm."""
    n = len(t_emit)
    keep = passed & (rng.random(n) < arm.gamma)
    t = t_emit + arm.delay_per_nm_ps * detuning_nm + _gauss(rng, n, arm.jitter_ps)
    keep &= rng.random(n) < arm.eta
    return t[keep]


class _Generator:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        r = config.rates
        self.arms = (
            _arm_model(config.detector_a, config.fiber_a, r.transmissivity_a, _single_pass_prob(config, "A")),
            _arm_model(config.detector_b, config.fiber_b, r.transmissivity_b, _single_pass_prob(config, "B")),
        )
        self.pair_probs = _pair_outcome_probs(config)
        self.sigma_nm = config.source_bandwidth_nm / FWHM_PER_SIGMA
        self.min_delay = int(math.floor(min(min(a.min_delay_ps(self.sigma_nm) for a in self.arms), 0.0))) - 1
        draws_per_s = r.pair_rate_hz + 2 * (r.total_rate_hz - r.pair_rate_hz) + sum(a.dark_hz for a in self.arms)
        span = -self.min_delay
        chunk_ps = CHUNK_DRAWS / draws_per_s * PS if draws_per_s > 0 else config.duration_ps
        self.chunk_ps = int(min(max(chunk_ps, 4 * span, 1), config.duration_ps))

    def candidates(self, rng: np.random.Generator, t0: int, t1: int) -> tuple[np.ndarray, np.ndarray]:
        r = self.config.rates
        dt_s = (t1 - t0) / PS
        arm_a, arm_b = self.arms

        n_pairs = rng.poisson(r.pair_rate_hz * dt_s)
        t_pair = rng.uniform(t0, t1, n_pairs)
        outcome = np.searchsorted(np.cumsum(self.pair_probs)[:-1], rng.random(n_pairs), side="right")
        pass_a = (outcome == 0) | (outcome == 1)
        pass_b = (outcome == 0) | (outcome == 2)
        detune = _gauss(rng, n_pairs, self.sigma_nm)
        # energy conservation: partner detunings are anti-correlated
        pair_a = _arm_times(rng, arm_a, t_pair, detune, pass_a)
        pair_b = _arm_times(rng, arm_b, t_pair, -detune, pass_b)

        out = []
        for arm, pair_times in ((arm_a, pair_a), (arm_b, pair_b)):
            n_single = rng.poisson((r.total_rate_hz - r.pair_rate_hz) * dt_s)
            t_single = rng.uniform(t0, t1, n_single)
            passed = rng.random(n_single) < arm.single_pass_prob
            singles = _arm_times(rng, arm, t_single, _gauss(rng, n_single, self.sigma_nm), passed)
            darks = rng.uniform(t0, t1, rng.poisson(arm.dark_hz * dt_s))
            times = np.rint(np.concatenate([pair_times, singles, darks])).astype(np.int64)
            out.append(times[(times >= 0) & (times < self.config.duration_ps)])
        return out[0], out[1]


def iter_event_chunks(config: ExperimentConfig) -> Iterator[tuple[np.ndarray, np.ndarray, int]]:
    """Yield (accepted A times, accepted B times, boundary_ps) chunk by chunk.

    Every event of both channels below ``boundary_ps`` has been emitted once a
    chunk with that boundary is yielded.
    """
    gen = _Generator(config)
    rng = np.random.default_rng(config.seed)
    duration = config.duration_ps
    pending = [np.empty(0, np.int64), np.empty(0, np.int64)]
    state = [
        {"last": _kernels.NEVER, "heap": np.empty(16, np.int64), "heap_n": 0},
        {"last": _kernels.NEVER, "heap": np.empty(16, np.int64), "heap_n": 0},
    ]
    t0 = 0
    while t0 < duration:
        t1 = min(t0 + gen.chunk_ps, duration)
        fresh = gen.candidates(rng, t0, t1)
        limit = duration if t1 >= duration else t1 + gen.min_delay
        accepted = []
        for k, arm in enumerate(gen.arms):
            merged = np.sort(np.concatenate([pending[k], fresh[k]]), kind="stable")
            cut = int(np.searchsorted(merged, limit, side="left"))
            ready, pending[k] = merged[:cut], merged[cut:]
            st = state[k]
            acc, st["last"], st["heap"], st["heap_n"] = _kernels.deadtime_filter(
                ready,
                np.int64(limit),
                np.int64(arm.dead_ps),
                float(arm.ap_prob),
                float(arm.ap_tau_ps),
                np.int64(st["last"]),
                st["heap"],
                st["heap_n"],
                int(rng.integers(0, 2**32)),
            )
            accepted.append(acc)
        yield accepted[0], accepted[1], limit
        t0 = t1


def simulate(config: ExperimentConfig) -> EventStream:
    """Run the full source/channel/detector pipeline; deterministic per seed."""
    a_parts, b_parts = [], []
    for a, b, _ in iter_event_chunks(config):
        a_parts.append(a)
        b_parts.append(b)
    cat = lambda parts: np.concatenate(parts) if parts else np.empty(0, np.int64)  # noqa: E731
    return EventStream(cat(a_parts), cat(b_parts), config.duration_ps)


# -- counting ------------------------------------------------------------------


def _check_sorted(x: np.ndarray, name: str, after: int | None = None) -> None:
    if len(x) and np.any(np.diff(x) < 0):
        raise ValueError(f"channel {name} timestamps are not sorted")
    if after is not None and len(x) and x[0] < after:
        raise ValueError(f"channel {name} timestamps go back in time across chunks")


class CoincidenceCounter:
    """Streaming greedy coincidence counter (see ``count_coincidences``)."""

    def __init__(self, window_ps: int, offset_ps: int = 0):
        if window_ps < 0:
            raise ValueError("window must be nonnegative")
        self.window_ps = int(window_ps)
        self.offset_ps = int(offset_ps)
        self.singles_a = 0
        self.singles_b = 0
        self.coincidences = 0
        self._a = np.empty(0, np.int64)
        self._b = np.empty(0, np.int64)
        self._last = [None, None]

    def feed(self, a: np.ndarray, b: np.ndarray, boundary_ps: int | None = None) -> None:
        """Add sorted events; ``boundary_ps=None`` marks the final chunk."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        _check_sorted(a, "A", self._last[0])
        _check_sorted(b, "B", self._last[1])
        if len(a):
            self._last[0] = int(a[-1])
        if len(b):
            self._last[1] = int(b[-1])
        self.singles_a += len(a)
        self.singles_b += len(b)
        self._a = np.concatenate([self._a, a])
        self._b = np.concatenate([self._b, b])
        if boundary_ps is None:
            bound2 = np.iinfo(np.int64).max
        else:
            bound2 = 2 * int(boundary_ps) - self.window_ps - 2 * self.offset_ps
        c, i, j = _kernels.greedy_match(self._a, self._b, np.int64(self.offset_ps), np.int64(self.window_ps), np.int64(bound2))
        self.coincidences += int(c)
        self._a = self._a[i:]
        self._b = self._b[j:]

    def record(self, duration_s: float) -> CountsRecord:
        return CountsRecord(self.singles_a, self.singles_b, self.coincidences, duration_s, self.window_ps / PS)


class DelayAccumulator:
    """Streaming all-pairs histogram of t_B - t_A."""

    def __init__(self, bin_width_ps: int, range_ps):
        bin_width_ps = int(bin_width_ps)
        if bin_width_ps <= 0:
            raise ValueError(f"bin width must be positive, got {bin_width_ps}")
        lo, hi = (-range_ps, range_ps) if np.isscalar(range_ps) else range_ps
        lo, hi = int(lo), int(hi)
        if hi <= lo:
            raise ValueError("histogram range is empty")
        nbins = -(-(hi - lo) // bin_width_ps)
        self.hist = DelayHistogram(bin_width_ps, lo, np.zeros(nbins, np.int64))
        self._a = np.empty(0, np.int64)
        self._b = np.empty(0, np.int64)

    def feed(self, a, b, boundary_ps: int | None = None) -> None:
        self._a = np.concatenate([self._a, np.asarray(a, np.int64)])
        self._b = np.concatenate([self._b, np.asarray(b, np.int64)])
        bound = np.iinfo(np.int64).max // 2 if boundary_ps is None else int(boundary_ps)
        h = self.hist
        i, j = _kernels.delay_pairs(self._a, self._b, np.int64(h.lo_ps), np.int64(h.hi_ps), np.int64(h.bin_width_ps), h.counts, np.int64(bound))
        self._a = self._a[i:]
        self._b = self._b[j:]


def _stream_arrays(events) -> tuple[np.ndarray, np.ndarray, int | None]:
    if isinstance(events, EventStream):
        return events.a, events.b, events.duration_ps
    a, b = events
    return np.asarray(a, np.int64), np.asarray(b, np.int64), None


def count_coincidences(events, window_s: float, offset_ps: int = 0, duration_s: float | None = None) -> CountsRecord:
    """Pair each A event with the earliest unconsumed B event in the window.

    The window is centered on ``offset_ps`` and has total width ``window_s``;
    each event is used at most once.
    """
    a, b, dur_ps = _stream_arrays(events)
    counter = CoincidenceCounter(int(round(window_s * PS)), offset_ps)
    counter.feed(a, b)
    if duration_s is None:
        duration_s = dur_ps / PS if dur_ps is not None else 0.0
    return counter.record(duration_s)


def delay_histogram(events, bin_width_ps: int, range_ps) -> DelayHistogram:
    a, b, _ = _stream_arrays(events)
    _check_sorted(a, "A")
    _check_sorted(b, "B")
    acc = DelayAccumulator(bin_width_ps, range_ps)
    acc.feed(a, b)
    return acc.hist


def simulate_counts(config: ExperimentConfig, histogram: DelayAccumulator | None = None) -> CountsRecord:
    """Simulate and count in one streaming pass (no full stream in memory)."""
    counter = CoincidenceCounter(config.window_ps, config.offset_ps)
    for a, b, boundary in iter_event_chunks(config):
        final = boundary >= config.duration_ps
        counter.feed(a, b, None if final else boundary)
        if histogram is not None:
            histogram.feed(a, b, None if final else boundary)
    return counter.record(config.duration_s)


# -- parameter scans ---------------------------------------------------------


def _both_detectors(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, detector_a=replace(cfg.detector_a, **kw), detector_b=replace(cfg.detector_b, **kw))


def _rates(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, rates=replace(cfg.rates, **kw))


SCAN_PARAMETERS: dict[str, Callable[[ExperimentConfig, float], ExperimentConfig]] = {
    "dead_time_s": lambda c, v: _both_detectors(c, dead_time_s=v),
    "dead_time_ns": lambda c, v: _both_detectors(c, dead_time_s=v * 1e-9),
    "dead_time_us": lambda c, v: _both_detectors(c, dead_time_s=v * 1e-6),
    "eta_q": lambda c, v: _both_detectors(c, eta_q=v),
    "dark_rate_hz": lambda c, v: _both_detectors(c, dark_rate_hz=v),
    "attenuation_db": lambda c, v: _rates(c, transmissivity_a=db_to_transmissivity(v), transmissivity_b=db_to_transmissivity(v)),
    "attenuation_a_db": lambda c, v: _rates(c, transmissivity_a=db_to_transmissivity(v)),
    "attenuation_b_db": lambda c, v: _rates(c, transmissivity_b=db_to_transmissivity(v)),
    "transmissivity": lambda c, v: _rates(c, transmissivity_a=v, transmissivity_b=v),
    "window_s": lambda c, v: _rates(c, window_s=v),
    "window_ps": lambda c, v: _rates(c, window_s=v / PS),
    "pair_rate_hz": lambda c, v: _rates(c, pair_rate_hz=v),
    "total_rate_hz": lambda c, v: _rates(c, total_rate_hz=v),
    "fiber_length_b_km": lambda c, v: replace(c, fiber_b=replace(c.fiber_b, length_km=v)),
    "duration_s": lambda c, v: replace(c, duration_s=v),
}


def set_parameter(config: ExperimentConfig, name: str, value: float) -> ExperimentConfig:
    try:
        setter = SCAN_PARAMETERS[name]
    except KeyError:
        raise KeyError(f"unknown scan parameter {name!r}; choose from {sorted(SCAN_PARAMETERS)}") from None
    return setter(config, float(value))


def derive_seed(seed: int, *indices: int) -> int:
    """Independent 64-bit child seed for a grid point or setting."""
    return int(np.random.SeedSequence([seed, *indices]).generate_state(1, np.uint64)[0])


@dataclass
class ScanResult:
    axis1: tuple[str, list[float]]
    axis2: tuple[str, list[float]]
    records: list[list[CountsRecord]]

    def matrix(self, observable: str) -> np.ndarray:
        """Grid of ``singles_a``, ``singles_b``, ``coincidences`` or a rate property."""
        return np.array([[getattr(r, observable) for r in row] for row in self.records], dtype=float)


def scan_grid(
    base: ExperimentConfig,
    axis1: tuple[str, Sequence[float]],
    axis2: tuple[str, Sequence[float]],
    max_workers: int = 1,
) -> ScanResult:
    """Simulate and count on the product grid of two parameters.

    Point (i, j) runs with seed ``derive_seed(base.seed, i, j)``.
    """
    name1, values1 = axis1[0], list(axis1[1])
    name2, values2 = axis2[0], list(axis2[1])
    for name in (name1, name2):
        if name not in SCAN_PARAMETERS:
            raise KeyError(f"unknown scan parameter {name!r}; choose from {sorted(SCAN_PARAMETERS)}")

    def point(ij: tuple[int, int]) -> CountsRecord:
        i, j = ij
        cfg = set_parameter(set_parameter(base, name1, values1[i]), name2, values2[j])
        return simulate_counts(replace(cfg, seed=derive_seed(base.seed, i, j)))

    grid = [(i, j) for i in range(len(values1)) for j in range(len(values2))]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            flat = list(pool.map(point, grid))
    else:
        flat = [point(ij) for ij in grid]
    rows = [flat[i * len(values2) : (i + 1) * len(values2)] for i in range(len(values1))]
    return ScanResult((name1, values1), (name2, values2), rows)
