"""YAML run configuration with strict, line-precise validation.

Time quantities carry their unit in the key name (``dead_time_ns``,
``window_ps``, ...); any of the suffixes s, ms, us, ns, ps is accepted and
converted to seconds.  Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .analytic import DetectorParams, RateSet, db_to_transmissivity
from .counts import TOMOGRAPHY_16, TOMOGRAPHY_36
from .presets import PRESETS
from .quantum_state import AXES, SourceStateModel, axis_vector, bell_state, bloch_vector, rotation_unitary
from .simulation import SCAN_PARAMETERS, ExperimentConfig, Fiber

TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12}
MODES = ("monte_carlo", "sampled", "expected")


class ConfigError(ValueError):
    pass


def parse_time(text: str, default_unit: str = "ps") -> float:
    """'1.5ns' -> 1.5e-9 s; a bare number uses ``default_unit``."""
    s = str(text).strip().replace("µ", "u")
    for unit in sorted(TIME_UNITS, key=len, reverse=True):
        if s.endswith(unit) and s[: -len(unit)].strip():
            head = s[: -len(unit)].strip()
            try:
                return float(head) * TIME_UNITS[unit]
            except ValueError:
                break
    try:
        return float(s) * TIME_UNITS[default_unit]
    except ValueError:
        raise ValueError(f"cannot parse time value {text!r}") from None


def _line_map(node, path=(), out=None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_map(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


class _Section:
    """View on one mapping of the config that tracks which keys were read."""

    def __init__(self, data: Any, path: tuple, ctx: "_Context"):
        self.path = path
        self.ctx = ctx
        if data is None:
            data = {}
        if not isinstance(data, dict):
            ctx.fail(path, "expected a mapping")
        self.data = data
        self.used: set[str] = set()

    def error(self, key: str | None, msg: str):
        self.ctx.fail(self.path + ((key,) if key else ()), msg)

    def has(self, key: str) -> bool:
        return key in self.data

    def raw(self, key: str, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def number(self, key: str, default=None, lo=None, hi=None, required=False) -> float:
        if key not in self.data:
            if required:
                self.error(None, f"missing required key '{key}'")
            return default
        v = self.raw(key)
        try:
            x = float(v)
        except (TypeError, ValueError):
            self.error(key, f"'{key}' must be a number, got {v!r}")
        if not np.isfinite(x):
            self.error(key, f"'{key}' must be finite")
        if lo is not None and x < lo:
            self.error(key, f"'{key}' must be >= {lo}, got {x}")
        if hi is not None and x > hi:
            self.error(key, f"'{key}' must be <= {hi}, got {x}")
        return x

    def integer(self, key: str, default=None, lo=None) -> int:
        x = self.number(key, default, lo=lo)
        if x is None:
            return None
        if float(x) != int(x):
            self.error(key, f"'{key}' must be an integer")
        return int(x)

    def boolean(self, key: str, default: bool) -> bool:
        v = self.raw(key, default)
        if not isinstance(v, bool):
            self.error(key, f"'{key}' must be true or false")
        return v

    def choice(self, key: str, options, default):
        v = self.raw(key, default)
        if v not in options:
            self.error(key, f"'{key}' must be one of {list(options)}, got {v!r}")
        return v

    def time(self, base: str, default=None, required=False, signed=False) -> float:
        """Read ``base_<unit>``; exactly one unit variant may be present."""
        present = [u for u in TIME_UNITS if f"{base}_{u}" in self.data]
        if len(present) > 1:
            self.error(f"{base}_{present[1]}", f"'{base}' given in more than one unit")
        if not present:
            if required:
                self.error(None, f"missing required key '{base}_<unit>' (units: {', '.join(TIME_UNITS)})")
            return default
        key = f"{base}_{present[0]}"
        return self.number(key, lo=None if signed else 0) * TIME_UNITS[present[0]]

    def section(self, key: str) -> "_Section":
        self.used.add(key)
        return _Section(self.data.get(key), self.path + (key,), self.ctx)

    def finish(self) -> None:
        extra = [k for k in self.data if k not in self.used]
        if extra:
            self.error(extra[0], f"unknown key '{extra[0]}'")


@dataclass
class _Context:
    source: str
    lines: dict

    def fail(self, path: tuple, msg: str):
        line = None
        p = path
        while line is None and p is not None:
            line = self.lines.get(p)
            p = p[:-1] if p else None
        where = f"{self.source}:{line}" if line else self.source
        dotted = ".".join(str(x) for x in path)
        raise ConfigError(f"{where}: {dotted + ': ' if dotted else ''}{msg}")


@dataclass(frozen=True)
class ScanSpec:
    axis1: tuple[str, list[float]]
    axis2: tuple[str, list[float]]
    workers: int = 1


@dataclass(frozen=True)
class HistogramSpec:
    bin_width_ps: int = 100
    range_ps: tuple[int, int] = (-20_000, 20_000)


@dataclass(frozen=True)
class TomographySpec:
    mode: str = "sampled"
    shots_per_setting: float = 1e5
    settings: int = 16
    setting_duration_s: float = 1.0
    max_iter: int = 10_000
    tol: float = 1e-10

    @property
    def setting_list(self):
        return TOMOGRAPHY_16 if self.settings == 16 else TOMOGRAPHY_36


@dataclass(frozen=True)
class MetricsSpec:
    mode: str = "monte_carlo"
    setting_duration_s: float = 1.0
    shots_per_setting: float = 1e5
    subtract_accidentals: bool = False
    expected_state: str = "phi+"
    sv_angles: int = 8


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    seed: int = 0
    scan: ScanSpec | None = None
    histogram: HistogramSpec = field(default_factory=HistogramSpec)
    tomography: TomographySpec = field(default_factory=TomographySpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    output_dir: str | None = None
    config_hash: str = ""
    preset: str | None = None

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, experiment=replace(self.experiment, seed=seed))


def _bloch_or_axis(sec: _Section, key: str, default):
    v = sec.raw(key, default)
    if isinstance(v, str):
        if v.upper() not in AXES:
            sec.error(key, f"unknown polarization axis {v!r}")
        vec = axis_vector(v.upper())
        return tuple(float(x) for x in bloch_vector(np.outer(vec, vec.conj())))
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        vec = axis_vector(float(v))
        return tuple(float(x) for x in bloch_vector(np.outer(vec, vec.conj())))
    if isinstance(v, list) and len(v) == 3:
        try:
            vec = tuple(float(x) for x in v)
        except (TypeError, ValueError):
            sec.error(key, "Bloch vector entries must be numbers")
        if np.linalg.norm(vec) > 1 + 1e-12:
            sec.error(key, "Bloch vector is longer than 1")
        return vec
    sec.error(key, f"'{key}' must be an axis label, an angle in degrees or a Bloch vector [s1, s2, s3]")


def _rotation(sec: _Section, key: str) -> np.ndarray:
    if not sec.has(key):
        return np.eye(2, dtype=complex)
    r = sec.section(key)
    axis = r.raw("axis", [0, 0, 1])
    if not (isinstance(axis, list) and len(axis) == 3):
        r.error("axis", "rotation axis must be a list of three numbers")
    angle = r.number("angle_deg", 0.0)
    r.finish()
    return rotation_unitary([float(x) for x in axis], angle)


def _state(sec: _Section) -> tuple[SourceStateModel, str | None]:
    if sec.has("preset"):
        name = sec.choice("preset", sorted(PRESETS), None)
        sec.finish()
        return PRESETS[name], name
    kind = sec.raw("bell", "phi+")
    try:
        bell_state(kind)
    except ValueError as exc:
        sec.error("bell", str(exc))
    depol = sec.number("depolarized_fraction", 0.0, 0, 1)
    imp = sec.number("impurity_fraction", 0.0, 0, 1)
    bell = sec.number("bell_fraction", 1.0 - depol - imp, 0, 1)
    if abs(bell + depol + imp - 1) > 1e-9:
        sec.error(None, "bell_fraction + depolarized_fraction + impurity_fraction must equal 1")
    model = SourceStateModel(
        bell_kind=kind,
        bell_fraction=bell,
        depolarized_fraction=depol,
        impurity_fraction=imp,
        impurity_a=_bloch_or_axis(sec, "impurity_a", "H"),
        impurity_b=_bloch_or_axis(sec, "impurity_b", "H"),
        pre_rotation_a=_rotation(sec, "rotation_a"),
        pre_rotation_b=_rotation(sec, "rotation_b"),
    )
    sec.finish()
    return model, None


def _analyzer(sec: _Section):
    v = sec.raw("analyzer", None)
    if v is None:
        return None
    if isinstance(v, str):
        if v.upper() not in AXES:
            sec.error("analyzer", f"unknown analyzer {v!r}; use one of {list(AXES)}, an angle, or null")
        return v.upper()
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    sec.error("analyzer", "analyzer must be an axis label, an angle in degrees, or null")


def _arm(sec: _Section):
    if sec.has("attenuation_db") and sec.has("transmissivity"):
        sec.error("transmissivity", "give either attenuation_db or transmissivity, not both")
    if sec.has("transmissivity"):
        gamma = sec.number("transmissivity", lo=0, hi=1)
    else:
        gamma = db_to_transmissivity(sec.number("attenuation_db", 0.0, lo=0))
    fiber = Fiber(
        length_km=sec.number("fiber_length_km", 0.0, lo=0),
        dispersion_ps_per_km_nm=sec.number("dispersion_ps_per_km_nm", 17.0, lo=0),
    )
    analyzer = _analyzer(sec)
    d = sec.section("detector")
    det = DetectorParams(
        eta_q=d.number("efficiency", 0.2, 0, 1),
        dead_time_s=d.time("dead_time", 0.0),
        dark_rate_hz=d.number("dark_rate_hz", 0.0, lo=0),
        afterpulse_prob=d.number("afterpulse_prob", 0.0, 0, 0.999999),
        afterpulse_tau_s=d.time("afterpulse_tau", 0.0),
        jitter_sigma_s=d.time("jitter", 0.0),
    )
    d.finish()
    sec.finish()
    return gamma, fiber, analyzer, det


def _experiment(sec: _Section, seed: int) -> tuple[ExperimentConfig, str | None]:
    duration = sec.time("duration", required=True)
    if duration <= 0:
        sec.error("duration_s", "duration must be positive")
    src = sec.section("source")
    pair = src.number("pair_rate_hz", required=True, lo=0)
    total = src.number("total_rate_hz", pair, lo=0)
    if pair > total:
        src.error("pair_rate_hz", "pair_rate_hz cannot exceed total_rate_hz")
    bandwidth = src.number("bandwidth_nm", 0.0, lo=0)
    state, preset = _state(src.section("state"))
    src.finish()
    ga, fa, an_a, det_a = _arm(sec.section("arm_a"))
    gb, fb, an_b, det_b = _arm(sec.section("arm_b"))
    coinc = sec.section("coincidence")
    window = coinc.time("window", 1e-9)
    offset = coinc.time("offset", 0.0, signed=True)
    coinc.finish()
    sec.finish()
    exp = ExperimentConfig(
        state=state,
        rates=RateSet(pair, total, ga, gb, window),
        detector_a=det_a,
        detector_b=det_b,
        fiber_a=fa,
        fiber_b=fb,
        source_bandwidth_nm=bandwidth,
        analyzer_a=an_a,
        analyzer_b=an_b,
        duration_s=duration,
        seed=seed,
        offset_ps=int(round(offset * 1e12)),
    )
    return exp, preset


def _scan(sec: _Section) -> ScanSpec:
    axes = []
    for key in ("axis1", "axis2"):
        ax = sec.section(key)
        name = ax.raw("parameter")
        if name not in SCAN_PARAMETERS:
            ax.error("parameter", f"unknown scan parameter {name!r}; choose from {sorted(SCAN_PARAMETERS)}")
        values = ax.raw("values")
        if not isinstance(values, list) or not values:
            ax.error("values", "values must be a nonempty list")
        try:
            values = [float(v) for v in values]
        except (TypeError, ValueError):
            ax.error("values", "values must be numbers")
        ax.finish()
        axes.append((name, values))
    workers = sec.integer("workers", 1, lo=1)
    sec.finish()
    return ScanSpec(axes[0], axes[1], workers)


def _histogram(sec: _Section) -> HistogramSpec:
    bw = sec.integer("bin_width_ps", 100, lo=1)
    rng = sec.raw("range_ps", 20_000)
    if isinstance(rng, list) and len(rng) == 2:
        lo, hi = int(rng[0]), int(rng[1])
    elif isinstance(rng, (int, float)) and rng > 0:
        lo, hi = -int(rng), int(rng)
    else:
        sec.error("range_ps", "range_ps must be a positive number or a [lo, hi] pair")
    if hi <= lo:
        sec.error("range_ps", "empty histogram range")
    sec.finish()
    return HistogramSpec(bw, (lo, hi))


def _tomography(sec: _Section) -> TomographySpec:
    spec = TomographySpec(
        mode=sec.choice("mode", MODES, "sampled"),
        shots_per_setting=sec.number("shots_per_setting", 1e5, lo=1),
        settings=sec.choice("settings", (16, 36), 16),
        setting_duration_s=sec.time("setting_duration", 1.0),
        max_iter=sec.integer("max_iter", 10_000, lo=1),
        tol=sec.number("tol", 1e-10, lo=0),
    )
    sec.finish()
    return spec


def _metrics(sec: _Section) -> MetricsSpec:
    spec = MetricsSpec(
        mode=sec.choice("mode", MODES, "monte_carlo"),
        setting_duration_s=sec.time("setting_duration", 1.0),
        shots_per_setting=sec.number("shots_per_setting", 1e5, lo=1),
        subtract_accidentals=sec.boolean("subtract_accidentals", False),
        expected_state=sec.choice("expected_state", ("phi+", "phi-", "psi+", "psi-"), "phi+"),
        sv_angles=sec.integer("sv_angles", 8, lo=4),
    )
    sec.finish()
    return spec


def parse_config(data: Any, source: str = "<config>", lines: dict | None = None) -> RunConfig:
    ctx = _Context(source, lines or {})
    root = _Section(data, (), ctx)
    seed = root.integer("seed", 0, lo=0)
    if seed >= 2**64:
        root.error("seed", "seed must fit in 64 bits")
    exp, preset = _experiment(root.section("experiment"), seed)
    scan = _scan(root.section("scan")) if root.has("scan") else None
    hist = _histogram(root.section("histogram"))
    tomo = _tomography(root.section("tomography"))
    metrics = _metrics(root.section("metrics"))
    out = root.section("output")
    out_dir = out.raw("dir", None)
    out.finish()
    root.finish()
    canonical = json.dumps(data, sort_keys=True, default=str).encode()
    return RunConfig(
        experiment=exp,
        seed=seed,
        scan=scan,
        histogram=hist,
        tomography=tomo,
        metrics=metrics,
        output_dir=out_dir,
        config_hash=hashlib.sha256(canonical).hexdigest()[:16],
        preset=preset,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigError(f"{path}{line}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    lines = _line_map(node) if node is not None else {}
    return parse_config(data, str(path), lines)
