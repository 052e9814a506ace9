"""Command-line interface: ``entsource {simulate,analyze,scan,metrics,tomography}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 non-convergence.
The output directory is ``--out``, else $ENTSOURCE_OUTPUT_DIR, else the
config's ``output.dir``, else ``./entsource_out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .analytic import expected_coincidence_rate, expected_singles_rate
from .config import ConfigError, RunConfig, load_config, parse_time
from .counts import MissingSettingsError, expected_counts
from .quantum_state import fidelity
from .report import acquire_counts, compute_report, render_table, report_for_experiment
from .simulation import PS, CoincidenceCounter, DelayAccumulator, iter_event_chunks, scan_grid
from .tomography import TomographyError, mle_reconstruct, qst_metrics, simulate_tomography

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED = 0, 2, 3, 4
OUTPUT_ENV = "ENTSOURCE_OUTPUT_DIR"
DEFAULT_OUTPUT = "entsource_out"

log = logging.getLogger("entsource")


class NotConverged(RuntimeError):
    pass


def _ps_arg(text: str) -> int:
    try:
        return int(round(parse_time(text, "ps") * PS))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _output_dir(args, run: RunConfig | None = None) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV) or (run.output_dir if run else None) or DEFAULT_OUTPUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(path, seed) -> RunConfig:
    run = load_config(path)
    return run.with_seed(seed) if seed is not None else run


def _apply_coincidence_flags(run: RunConfig, args) -> RunConfig:
    exp = run.experiment
    if getattr(args, "window_ps", None) is not None:
        exp = replace(exp, rates=replace(exp.rates, window_s=args.window_ps / PS))
    if getattr(args, "offset_ps", None) is not None:
        exp = replace(exp, offset_ps=args.offset_ps)
    return replace(run, experiment=exp)


def _provenance(run: RunConfig) -> dict:
    return {"config_hash": run.config_hash, "seed": run.seed}


def _predictions(run: RunConfig) -> dict:
    exp = run.experiment
    r = exp.rates
    out = {
        "singles_a_hz": expected_singles_rate(r, exp.detector_a, "A"),
        "singles_b_hz": expected_singles_rate(r, exp.detector_b, "B"),
    }
    if exp.analyzer_a is None and exp.analyzer_b is None:
        out["true_coincidence_hz"] = expected_coincidence_rate(r, exp.detector_a, exp.detector_b)
    out["note"] = "closed-form rates exclude dark counts and afterpulses"
    return out


# -- commands --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    run = _apply_coincidence_flags(_load(args.config, args.seed), args)
    exp = run.experiment
    out = _output_dir(args, run)
    counter = CoincidenceCounter(exp.window_ps, exp.offset_ps)

    def chunks():
        for a, b, boundary in iter_event_chunks(exp):
            counter.feed(a, b, None if boundary >= exp.duration_ps else boundary)
            yield a, b

    io.write_timestamps(out / "events.csv", chunks(), exp.duration_ps)
    rec = counter.record(exp.duration_s)
    summary = {
        "counts": rec.to_json(),
        "offset_ps": exp.offset_ps,
        "prediction": _predictions(run),
        "provenance": _provenance(run),
    }
    io.write_json(out / "counts.json", summary)
    print(f"singles A {rec.singles_a}  singles B {rec.singles_b}  coincidences {rec.coincidences}  -> {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    run = _load(args.config, None) if args.config else None
    window = args.window_ps if args.window_ps is not None else (run.experiment.window_ps if run else 1000)
    offset = args.offset_ps if args.offset_ps is not None else (run.experiment.offset_ps if run else 0)
    bin_ps = args.bin_width_ps or (run.histogram.bin_width_ps if run else 100)
    if args.range_ps is not None:
        rng = (-args.range_ps, args.range_ps)
    else:
        rng = run.histogram.range_ps if run else (-20_000, 20_000)
    if bin_ps <= 0:
        raise ConfigError("--bin-width-ps must be positive")
    out = _output_dir(args, run)
    counter = CoincidenceCounter(window, offset)
    acc = DelayAccumulator(bin_ps, rng)
    reader = io.TimestampReader(args.timestamps)
    for a, b, boundary in reader:
        counter.feed(a, b, boundary)
        acc.feed(a, b, boundary)
    duration_s = reader.duration_ps / PS
    rec = counter.record(duration_s)
    hist = acc.hist
    summary = {
        "counts": rec.to_json(),
        "offset_ps": offset,
        "histogram": {
            "bin_width_ps": bin_ps,
            "range_ps": [hist.lo_ps, hist.hi_ps],
            "total_pairs": hist.total,
            "floor_per_bin": hist.floor_level() if hist.total else 0.0,
            "fwhm_ps": hist.fwhm_ps() if hist.total else None,
        },
    }
    if args.subtract_accidentals:
        summary["coincidences_minus_accidentals"] = rec.coincidences - rec.accidental_estimate
    io.write_json(out / "counts.json", summary)
    io.write_histogram(out / "histogram.csv", hist, subtract_floor=args.subtract_accidentals)
    print(f"singles A {rec.singles_a}  singles B {rec.singles_b}  coincidences {rec.coincidences}  -> {out}")
    return EXIT_OK


def cmd_scan(args) -> int:
    run = _apply_coincidence_flags(_load(args.config, args.seed), args)
    if run.scan is None:
        raise ConfigError(f"{args.config}: the scan command needs a 'scan' section")
    out = _output_dir(args, run)
    spec = run.scan
    res = scan_grid(run.experiment, spec.axis1, spec.axis2, max_workers=spec.workers)
    for obs in ("singles_a", "singles_b", "coincidences"):
        io.write_matrix(out / f"{obs}.csv", res.axis1, res.axis2, res.matrix(obs), f"{obs} (counts over {run.experiment.duration_s} s)")
    io.write_json(
        out / "scan.json",
        {
            "axis1": {"parameter": res.axis1[0], "values": res.axis1[1]},
            "axis2": {"parameter": res.axis2[0], "values": res.axis2[1]},
            "records": [[r.to_json() for r in row] for row in res.records],
            "provenance": _provenance(run),
        },
    )
    print(f"{len(res.axis1[1])}x{len(res.axis2[1])} scan -> {out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    if bool(args.config) == bool(args.counts):
        raise ConfigError("give either --config (one or more) or --counts")
    reports = []
    if args.counts:
        out = _output_dir(args)
        counts = io.read_counts(args.counts)
        scans = io.read_singles_scans(args.singles_scan) if args.singles_scan else []
        if args.subtract_accidentals and (not counts.singles or counts.window_s is None):
            raise io.DataError(f"{args.counts}: --subtract-accidentals needs singles_a, singles_b and window_s columns")
        rep = compute_report(
            counts,
            scans,
            expected_state=args.expected_state,
            subtract_accidentals=args.subtract_accidentals,
            name=Path(args.counts).stem,
            provenance={"source": "files"},
        )
        reports.append(rep)
    else:
        out = None
        for k, path in enumerate(args.config):
            run = _apply_coincidence_flags(_load(path, args.seed), args)
            out = out or _output_dir(args, run)
            m = run.metrics
            rep, counts, scans = report_for_experiment(
                run.experiment,
                mode=m.mode,
                setting_duration_s=m.setting_duration_s,
                shots=m.shots_per_setting,
                seed=run.seed,
                expected_state=args.expected_state or m.expected_state,
                subtract_accidentals=args.subtract_accidentals or m.subtract_accidentals,
                sv_angles=m.sv_angles,
                name=run.preset or Path(path).stem,
                provenance=_provenance(run),
                max_iter=run.tomography.max_iter,
                tol=run.tomography.tol,
            )
            suffix = "" if len(args.config) == 1 else f"_{k + 1}"
            io.write_counts(out / f"counts{suffix}.csv", counts)
            io.write_singles_scans(out / f"singles_scans{suffix}.csv", scans)
            reports.append(rep)
    io.write_json(out / "report.json", {"reports": [r.to_json() for r in reports]})
    table = render_table(reports)
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    if not all(r.converged for r in reports):
        raise NotConverged("maximum-likelihood reconstruction did not converge")
    return EXIT_OK


def cmd_tomography(args) -> int:
    if bool(args.config) == bool(args.counts):
        raise ConfigError("give either --config or --counts")
    truth = None
    if args.counts:
        out = _output_dir(args)
        counts = io.read_counts(args.counts)
        max_iter, tol = args.max_iter or 10_000, 1e-10
        prov = {"source": "files"}
    else:
        run = _load(args.config, args.seed)
        out = _output_dir(args, run)
        t = run.tomography
        truth = run.experiment.state.to_density_matrix()
        if t.mode == "sampled":
            counts = simulate_tomography(truth, t.shots_per_setting, run.seed, t.setting_list)
        elif t.mode == "expected":
            counts = expected_counts(truth, t.setting_list, t.shots_per_setting)
        else:
            counts = acquire_counts(run.experiment, t.setting_list, "monte_carlo", setting_duration_s=t.setting_duration_s, seed=run.seed)
        max_iter, tol = args.max_iter or t.max_iter, t.tol
        prov = {**_provenance(run), "mode": t.mode, "settings": t.settings}
        if t.mode == "monte_carlo":
            prov["setting_duration_s"] = t.setting_duration_s
        else:
            prov["shots_per_setting"] = t.shots_per_setting
        io.write_counts(out / "tomography_counts.csv", counts)
    try:
        res = mle_reconstruct(counts, max_iter=max_iter, tol=tol)
    except MissingSettingsError as exc:
        raise io.DataError(f"{args.counts or args.config}: {exc}") from None
    doc = {"mle": res.to_json(), "metrics": qst_metrics(res.rho), "provenance": prov}
    doc["metrics"]["units"] = {"von_neumann_bits": "bit", "renyi2_a_nats": "nat", "renyi2_b_nats": "nat"}
    if truth is not None:
        doc["fidelity_to_true_state"] = fidelity(res.rho, truth)
    io.write_json(out / "mle.json", doc)
    m = doc["metrics"]
    print(
        f"purity {m['purity']:.4f}  S {m['von_neumann_bits']:.4f} bit  Y_A {m['renyi2_a_nats']:.4f} nat  "
        f"F({m['nearest_bell']}) {m['bell_fidelity']:.4f}  converged {res.converged}  -> {out}"
    )
    if not res.converged:
        raise NotConverged(f"no convergence within {max_iter} iterations")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entsource", description="Entangled photon-pair source simulator and analysis toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True, multi=False):
        if multi:
            sp.add_argument("--config", action="append", help="YAML run configuration (repeatable)")
        else:
            sp.add_argument("--config", required=config_required, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or config output.dir)")

    def coincidence(sp):
        sp.add_argument("--window-ps", type=_ps_arg, help="coincidence window; ps, or with unit suffix (e.g. 1ns)")
        sp.add_argument("--offset-ps", type=_ps_arg, help="B-minus-A delay offset; ps, or with unit suffix")

    sp = sub.add_parser("simulate", help="simulate an event stream and count coincidences")
    common(sp)
    coincidence(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="count coincidences and histogram delays of a timestamp file")
    sp.add_argument("timestamps", help="timestamp CSV (channel,time_ps)")
    sp.add_argument("--config", help="optional config supplying window, offset and histogram settings")
    sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV})")
    coincidence(sp)
    sp.add_argument("--bin-width-ps", type=_ps_arg, help="histogram bin width (default 100 ps)")
    sp.add_argument("--range-ps", type=_ps_arg, help="histogram half-range (default 20000 ps)")
    sp.add_argument("--subtract-accidentals", action="store_true", help="also report floor-subtracted coincidences and histogram")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("scan", help="two-parameter grid of singles and coincidence counts")
    common(sp)
    coincidence(sp)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("metrics", help="direct and tomographic source metrics")
    common(sp, multi=True)
    coincidence(sp)
    sp.add_argument("--counts", help="measured count table (axis_a,axis_b,counts,duration_s)")
    sp.add_argument("--singles-scan", help="singles scans (arm,pc_setting,angle_deg,counts)")
    sp.add_argument("--expected-state", choices=["phi+", "phi-", "psi+", "psi-"], help="Bell state defining correct correlations")
    sp.add_argument("--subtract-accidentals", action="store_true", help="subtract R_A R_B dt T per setting first")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("tomography", help="maximum-likelihood density matrix reconstruction")
    common(sp, config_required=False)
    sp.add_argument("--counts", help="count table with at least the {H,V,D,R}^2 settings")
    sp.add_argument("--max-iter", type=int, help="optimizer iteration limit")
    sp.set_defaults(func=cmd_tomography)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "command", None) == "metrics" and args.expected_state is None and args.counts:
        args.expected_state = "phi+"
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (io.DataError, MissingSettingsError, TomographyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
