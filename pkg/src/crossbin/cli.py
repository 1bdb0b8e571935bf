"""Command-line entry point: ``crossbin {histogram,scan,witness,strategies,qkd}``.

Exit codes: 0 success, 2 configuration error, 3 insufficient statistics.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

from . import pipeline
from .config import ConfigError, RunConfig, load_config
from .engine import IDEAL, calibrate, coincidence_distribution
from .histogram import SCAN_COLUMNS
from .qkd import dumps, sift, summary
from .witness import (WitnessInputError, all_strategies, classical_max, classical_mixture_max, quantum_ideal_s,
                      s_metric, strategy_statistics)

EXIT_CONFIG = 2
EXIT_STATS = 3


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.duration is not None:
        if args.duration < 0:
            raise ConfigError(["--duration: must be non-negative"])
        updates["duration"] = args.duration
    if args.out is not None:
        updates["output_dir"] = args.out
    if getattr(args, "workers", None):
        updates["workers"] = args.workers
    cfg = cfg.model_copy(update=updates)
    if args.phase_b and args.command != "scan":
        cfg = cfg.model_copy(update={"engine": cfg.engine.model_copy(
            update={"phase_b": args.phase_b[0]})})
    # re-validate the merged tree so overrides obey the same schema
    return RunConfig.model_validate(cfg.model_dump())


def _outdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _figures(args, fn, *a):
    if not getattr(args, "figures", False):
        return
    from . import plotting
    fn_ = getattr(plotting, fn)
    fn_(*a)


def cmd_histogram(args, cfg: RunConfig) -> int:
    out = _outdir(cfg)
    run = pipeline.run_histogram(cfg, args.strategy)
    with open(os.path.join(out, "histogram.csv"), "w", encoding="utf-8") as fh:
        run.histogram.to_csv(fh)
    write_json(os.path.join(out, "peaks.json"), run.summary(cfg))
    if args.events:
        with open(os.path.join(out, "events.csv"), "w", encoding="utf-8") as fh:
            run.stream.to_csv(fh)
    _figures(args, "plot_histogram", run.histogram, cfg.engine.bin_separation,
             os.path.join(out, "histogram.png"))
    print(f"{run.histogram.total} coincidences; peaks " +
          " ".join(f"{d:+d}:{n}" for d, n in run.peaks.items()))
    return 0


def _fits_json(scan) -> dict:
    return {
        "phase_b": scan.phase_b,
        "coincidences": scan.coincidences,
        "accidental_per_window": float(scan.accidental.mean() * 4),
        "peaks": {str(d): {
            "visibility": f.visibility, "visibility_err": f.visibility_err,
            "net_visibility": f.net_visibility, "net_visibility_err": f.net_visibility_err,
            "phase_offset": f.phase_offset, "phase_offset_err": f.fits[(0, 0)].phase_offset_err,
        } for d, f in sorted(scan.fringes.items())},
    }


def cmd_scan(args, cfg: RunConfig) -> int:
    out = _outdir(cfg)
    phase_bs = args.phase_b or cfg.analysis.scan_phase_b
    scans = []
    for pb in phase_bs:
        try:
            scans.append(pipeline.run_scan(cfg, pb))
        except ValueError as exc:
            raise ConfigError([f"scan: {exc}"]) from None
    with open(os.path.join(out, "scan.csv"), "w", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("phase_b",) + SCAN_COLUMNS)
        for s in scans:
            for row in s.rows():
                w.writerow((repr(s.phase_b),) + tuple("" if v is None else
                                                      repr(v) if isinstance(v, float) else v
                                                      for v in row))
    fits = {"scans": [_fits_json(s) for s in scans]}
    if len(scans) >= 2 and all(d in s.fringes for s in scans[:2] for d in (0, 1)):
        rel = [_wrap(s.fringes[0].phase_offset - s.fringes[1].phase_offset) for s in scans[:2]]
        fits["t0_minus_t1_phase"] = rel
        fits["relative_shift"] = abs(_wrap(rel[0] - rel[1]))
    write_json(os.path.join(out, "fits.json"), fits)
    _figures(args, "plot_scans", scans, os.path.join(out, "scan.png"))
    for s in scans:
        print(f"phase_b={s.phase_b:.4f}: " + " ".join(
            f"T{d:+d} V={f.visibility:.3f}" for d, f in sorted(s.fringes.items()) if abs(d) <= 2))
    return 0


def _wrap(x: float) -> float:
    return (x + math.pi) % (2 * math.pi) - math.pi


def cmd_witness(args, cfg: RunConfig) -> int:
    out = _outdir(cfg)
    run = pipeline.run_witness(cfg, args.strategy, args.method)
    engine = cfg.engine_config()
    report = run.report.to_dict()
    s_max, argmax = classical_max()
    ideal_dist = coincidence_distribution(engine, IDEAL)
    report["reference"] = {
        "classical_max": s_max,
        "classical_maximizers": len(argmax),
        "classical_mixture_max": classical_mixture_max(),
        "quantum_ideal": quantum_ideal_s(ideal_dist, calibrate(engine.phase_a, engine.phase_b,
                                                                engine.source_mode)),
    }
    report["strategy"] = None if run.strategy is None else run.strategy.label()
    write_json(os.path.join(out, "witness.json"), report)
    r = run.report
    print(f"S = {r.S:.4f} +- {r.sigma:.4f} ({r.n_sigma_above_classical:.1f} sigma above 1): {r.verdict}")
    return 0


def cmd_strategies(args, cfg: RunConfig | None) -> int:
    s_max, _ = classical_max()
    rows = [(t, s_metric(strategy_statistics(t))) for t in all_strategies()]
    out = None if cfg is None else _outdir(cfg)
    if out is not None:
        with open(os.path.join(out, "strategies.csv"), "w", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("offset", "a0", "a1", "b0", "b1", "S", "is_max"))
            for t, s in rows:
                w.writerow((t.offset,) + tuple("r" if v is None else v for v in (t.a0, t.a1, t.b0, t.b1))
                           + (repr(s), int(abs(s - s_max) < 1e-12)))
    print(f"{'table':<16}{'S':>8}")
    for t, s in rows:
        mark = "  <- max" if abs(s - s_max) < 1e-12 else ""
        print(f"{t.label():<16}{s:>8.4f}{mark}")
    print(f"{len(rows)} strategies; maximum S = {s_max:.6f}")
    return 0


def cmd_qkd(args, cfg: RunConfig) -> int:
    out = _outdir(cfg)
    run = pipeline.run_qkd(cfg, args.strategy)
    key = sift(run.coincidences, cfg.engine.bin_separation, cfg.analysis.window, run.calibration)
    with open(os.path.join(out, "key.txt"), "w", encoding="utf-8") as fh:
        key.write_lines(fh)
    summ = summary(key, run.report, cfg.witness.threshold_sigmas)
    summ["strategy"] = None if run.strategy is None else run.strategy.label()
    with open(os.path.join(out, "qkd_summary.json"), "w", encoding="utf-8") as fh:
        fh.write(dumps(summ))
    q = summ["qber"]
    print(f"usable {summ['usable_fraction']:.4f}; QBER T0={q['T0']} T1={q['T1']}; {summ['verdict']}")
    return 0


COMMANDS = {
    "histogram": cmd_histogram,
    "scan": cmd_scan,
    "witness": cmd_witness,
    "strategies": cmd_strategies,
    "qkd": cmd_qkd,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossbin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--duration", type=float, metavar="S")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--phase-b", type=float, action="append", metavar="RAD")
        sp.add_argument("--strategy", metavar="{a,b,c|OFFSET:A0,A1,B0,B1}")
        sp.add_argument("--figures", action="store_true", help="also render PNG figures")
        if name == "witness":
            sp.add_argument("--method", choices=("auto", "visibility", "direct"))
        if name == "histogram":
            sp.add_argument("--events", action="store_true", help="write events.csv")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "strategies":
            cfg = _effective_config(args) if (args.out or args.config) else None
        else:
            cfg = _effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        for m in exc.messages:
            print(f"config error: {m}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.InsufficientStatistics, WitnessInputError) as exc:
        print(f"insufficient statistics: {exc}", file=sys.stderr)
        return EXIT_STATS
    except (ValueError, TypeError) as exc:
        from pydantic import ValidationError
        if isinstance(exc, ValidationError):
            for e in exc.errors():
                print("config error: " + ".".join(map(str, e["loc"])) + f": {e['msg']}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
