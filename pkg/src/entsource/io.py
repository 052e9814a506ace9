"""File formats: timestamp CSV, count tables, singles scans, JSON and CSV matrices.

Every reader reports problems as ``DataError`` with ``path:line`` prefixes.
Every writer is deterministic: the same inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .counts import BasisCounts
from .direct import SinglesScan
from .quantum_state import AXES
from .simulation import PS, DelayHistogram, EventStream

TIMESTAMP_HEADER = "channel,time_ps"
COUNTS_HEADER = ("axis_a", "axis_b", "counts", "duration_s")
COUNTS_OPTIONAL = ("singles_a", "singles_b", "window_s")
SCAN_HEADER = ("arm", "pc_setting", "angle_deg", "counts")


class DataError(ValueError):
    pass


def _fail(path, line: int | None, msg: str):
    where = f"{path}:{line}" if line else str(path)
    raise DataError(f"{where}: {msg}")


def fmt_number(x) -> str:
    """Shortest round-tripping text for a number; integral values print as ints."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _to_builtin(obj):
    if isinstance(obj, dict):
        return {str(k): _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_builtin(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_to_builtin(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


# -- timestamps ----------------------------------------------------------------


def write_timestamps(path: str | Path, chunks: Iterable[tuple[np.ndarray, np.ndarray]], duration_ps: int) -> tuple[int, int]:
    """Stream (A, B) event chunks to the timestamp CSV; returns event totals.

    Chunks must be consecutive in time: every event of a chunk precedes every
    event of the next one.
    """
    na = nb = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# duration_ps={int(duration_ps)}\n{TIMESTAMP_HEADER}\n")
        for chunk in chunks:
            a, b = chunk[0], chunk[1]
            na += len(a)
            nb += len(b)
            times = np.concatenate([a, b])
            chans = np.concatenate([np.zeros(len(a), np.int8), np.ones(len(b), np.int8)])
            order = np.lexsort((chans, times))
            labels = np.where(chans[order] == 0, "A", "B")
            fh.writelines(f"{c},{t}\n" for c, t in zip(labels, times[order].tolist()))
    return na, nb


class TimestampReader:
    """Streaming reader for the timestamp CSV.

    Iterating yields (A times, B times, boundary_ps) chunks in the same shape
    the simulator produces; the last chunk has boundary None.  ``duration_ps``
    comes from a ``# duration_ps=`` comment when present, otherwise it is one
    past the last timestamp (0 for an empty file).
    """

    def __init__(self, path: str | Path, chunk_rows: int = 500_000):
        self.path = Path(path)
        self.chunk_rows = chunk_rows
        self.duration_ps: int | None = None
        self.last_time_ps: int | None = None

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray, int | None]]:
        try:
            fh = open(self.path, encoding="utf-8")
        except OSError as exc:
            _fail(self.path, None, f"cannot read timestamps ({exc.strerror})")
        a: list[int] = []
        b: list[int] = []
        seen_header = False
        prev = -1
        declared = None
        with fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition("=")
                    if key.strip() == "duration_ps":
                        try:
                            declared = int(value.strip())
                        except ValueError:
                            _fail(self.path, lineno, f"bad duration_ps comment {value.strip()!r}")
                    continue
                if not seen_header:
                    if line.replace(" ", "") != TIMESTAMP_HEADER:
                        _fail(self.path, lineno, f"expected header '{TIMESTAMP_HEADER}', got {line!r}")
                    seen_header = True
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    _fail(self.path, lineno, f"expected 2 fields 'channel,time_ps', got {len(parts)}")
                ch, ts = parts[0].strip().upper(), parts[1].strip()
                if ch not in ("A", "B"):
                    _fail(self.path, lineno, f"channel must be A or B, got {parts[0].strip()!r}")
                if not ts.isdigit():
                    _fail(self.path, lineno, f"time_ps must be a nonnegative integer, got {ts!r}")
                t = int(ts)
                if t < prev:
                    _fail(self.path, lineno, f"timestamps not sorted: {t} after {prev}")
                prev = t
                (a if ch == "A" else b).append(t)
                if len(a) + len(b) >= self.chunk_rows:
                    # later rows are >= t, so everything below t is final
                    yield np.array(a, np.int64), np.array(b, np.int64), t
                    a, b = [], []
        if declared is not None and prev >= declared:
            _fail(self.path, None, f"timestamp {prev} lies beyond declared duration_ps={declared}")
        self.last_time_ps = prev if prev >= 0 else None
        self.duration_ps = declared if declared is not None else prev + 1
        yield np.array(a, np.int64), np.array(b, np.int64), None


def read_timestamps(path: str | Path) -> EventStream:
    reader = TimestampReader(path)
    parts = list(reader)
    a = np.concatenate([p[0] for p in parts])
    b = np.concatenate([p[1] for p in parts])
    return EventStream(a, b, reader.duration_ps)


# -- count tables ----------------------------------------------------------------


def _rows(path: Path, required: Sequence[str], optional: Sequence[str] = ()):
    """Yield (line number, row dict) from a CSV with a header, skipping comments."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        _fail(path, None, f"cannot read ({exc.strerror})")
    with fh:
        lines = ((i, ln) for i, ln in enumerate(fh, 1) if ln.strip() and not ln.lstrip().startswith("#"))
        header = None
        for lineno, line in lines:
            fields = next(csv.reader([line]))
            fields = [f.strip() for f in fields]
            if header is None:
                missing = [c for c in required if c not in fields]
                unknown = [c for c in fields if c not in required and c not in optional]
                if missing:
                    _fail(path, lineno, f"header lacks column(s) {', '.join(missing)}")
                if unknown:
                    _fail(path, lineno, f"unknown column(s) {', '.join(unknown)}")
                header = fields
                continue
            if len(fields) != len(header):
                _fail(path, lineno, f"expected {len(header)} fields, got {len(fields)}")
            yield lineno, dict(zip(header, fields))
        if header is None:
            _fail(path, None, f"missing header ({','.join(required)})")


def _num(path, lineno, row, key, *, positive=False, integer=False) -> float:
    text = row[key]
    try:
        v = float(text)
    except ValueError:
        _fail(path, lineno, f"{key} must be a number, got {text!r}")
    if not math.isfinite(v) or v < 0 or (positive and v == 0):
        _fail(path, lineno, f"{key} must be {'positive' if positive else 'nonnegative'}, got {text!r}")
    if integer and v != int(v):
        _fail(path, lineno, f"{key} must be an integer, got {text!r}")
    return v


def read_counts(path: str | Path) -> BasisCounts:
    """Read ``axis_a,axis_b,counts,duration_s`` rows (optional singles/window columns)."""
    path = Path(path)
    counts, durations, singles = {}, {}, {}
    windows = set()
    for lineno, row in _rows(path, COUNTS_HEADER, COUNTS_OPTIONAL):
        a, b = row["axis_a"].upper(), row["axis_b"].upper()
        for v in (a, b):
            if v not in AXES:
                _fail(path, lineno, f"unknown analyzer axis {v!r}; expected one of {', '.join(AXES)}")
        if (a, b) in counts:
            _fail(path, lineno, f"duplicate setting ({a},{b})")
        counts[(a, b)] = _num(path, lineno, row, "counts")
        durations[(a, b)] = _num(path, lineno, row, "duration_s", positive=True)
        if "singles_a" in row and "singles_b" in row and row["singles_a"] and row["singles_b"]:
            singles[(a, b)] = (_num(path, lineno, row, "singles_a"), _num(path, lineno, row, "singles_b"))
        if row.get("window_s"):
            windows.add(_num(path, lineno, row, "window_s"))
    if not counts:
        _fail(path, None, "no count rows")
    if len(windows) > 1:
        _fail(path, None, "window_s differs between rows")
    return BasisCounts(counts, durations, singles, windows.pop() if windows else None)


def write_counts(path: str | Path, counts: BasisCounts) -> None:
    has_singles = bool(counts.singles)
    header = list(COUNTS_HEADER) + (list(COUNTS_OPTIONAL) if has_singles else [])
    lines = [",".join(header)]
    for a, b in counts.settings:
        row = [a, b, fmt_number(counts.count(a, b)), fmt_number(counts.duration(a, b))]
        if has_singles:
            sa, sb = counts.singles.get((a, b), ("", ""))
            row += [fmt_number(sa) if sa != "" else "", fmt_number(sb) if sb != "" else ""]
            row.append(fmt_number(counts.window_s) if counts.window_s is not None else "")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_singles_scans(path: str | Path) -> list[SinglesScan]:
    """Group ``arm,pc_setting,angle_deg,counts`` rows into one scan per (arm, pc_setting)."""
    path = Path(path)
    groups: dict[tuple[str, str], list[tuple[float, float]]] = defaultdict(list)
    first_line: dict[tuple[str, str], int] = {}
    for lineno, row in _rows(path, SCAN_HEADER):
        arm = row["arm"].upper()
        if arm not in ("A", "B"):
            _fail(path, lineno, f"arm must be A or B, got {row['arm']!r}")
        try:
            angle = float(row["angle_deg"])
        except ValueError:
            _fail(path, lineno, f"angle_deg must be a number, got {row['angle_deg']!r}")
        key = (arm, row["pc_setting"])
        first_line.setdefault(key, lineno)
        groups[key].append((angle, _num(path, lineno, row, "counts")))
    scans = []
    for key, samples in groups.items():
        try:
            scans.append(SinglesScan(key[0], tuple(samples), key[1]))
        except ValueError as exc:
            _fail(path, first_line[key], f"scan {key[0]}/{key[1]}: {exc}")
    return scans


def write_singles_scans(path: str | Path, scans: Sequence[SinglesScan]) -> None:
    lines = [",".join(SCAN_HEADER)]
    for scan in scans:
        for angle, n in scan.samples:
            lines.append(f"{scan.arm},{scan.pc_setting},{fmt_number(angle)},{fmt_number(n)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- plot data -------------------------------------------------------------------


def write_matrix(path: str | Path, row_axis: tuple[str, Sequence[float]], col_axis: tuple[str, Sequence[float]], values: np.ndarray, quantity: str) -> None:
    """Heatmap CSV: first row holds column coordinates, first column row coordinates."""
    rname, rvals = row_axis
    cname, cvals = col_axis
    lines = [f"# {quantity}; rows: {rname}; columns: {cname}", ",".join([f"{rname}\\{cname}"] + [fmt_number(v) for v in cvals])]
    for rv, row in zip(rvals, values):
        lines.append(",".join([fmt_number(rv)] + [fmt_number(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix(path: str | Path) -> tuple[list[float], list[float], np.ndarray]:
    rows = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    cols = [float(x) for x in rows[0].split(",")[1:]]
    rvals, data = [], []
    for ln in rows[1:]:
        parts = ln.split(",")
        rvals.append(float(parts[0]))
        data.append([float(x) for x in parts[1:]])
    return rvals, cols, np.array(data)


def write_histogram(path: str | Path, hist: DelayHistogram, subtract_floor: bool = False) -> None:
    header = "bin_lo_ps,bin_hi_ps,counts"
    floor = hist.floor_level() if subtract_floor else None
    if subtract_floor:
        header += ",counts_minus_floor"
    lines = [f"# delay t_B - t_A; bin width {hist.bin_width_ps} ps", header]
    edges = hist.edges_ps
    sub = hist.subtract_floor(floor) if subtract_floor else None
    for k, n in enumerate(hist.counts):
        row = f"{int(edges[k])},{int(edges[k + 1])},{int(n)}"
        if subtract_floor:
            row += f",{fmt_number(sub[k])}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def duration_s_from_ps(duration_ps: int) -> float:
    return duration_ps / PS
