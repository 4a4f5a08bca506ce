"""Command-line entry point.

Subcommands: field-map, analyze-trap, load-sim, scan-barrier, scan-evap,
optimize, validate.  Every run writes its outputs plus a manifest into
--out; exit codes: 0 success, 2 config error, 3 physics precondition,
4 runtime failure.  The final stdout line is machine-readable JSON.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .configio import (
    apply_overrides,
    build_loading_config,
    config_hash,
    field_map_grid,
    load_config,
    resolve_layout,
)
from .deopt import DEConfig, optimize_loading
from .errors import ConfigError, TrapLoadError
from .loading import run_loading, scan_barrier, scan_evaporation
from .magnetics import ZeemanSystem, field_map
from .reporting import (
    RunManifest,
    trap_summary,
    write_csv,
    write_field_map,
    write_scan_csv,
    write_timeseries,
    write_trap_csv,
)
from .trapanalysis import characterize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHYSICS = 3
EXIT_RUNTIME = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trapload",
        description="Wire-trap loading simulator: fields, trap metrology, "
                    "DSMC loading dynamics, scans, and current optimization.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("field-map", "sample |B| and U on the configured grid"),
        ("analyze-trap", "characterize the trap of the configured currents"),
        ("load-sim", "run one continuous-loading experiment"),
        ("scan-barrier", "N(loading time) vs entrance-barrier height"),
        ("scan-evap", "N(loading time) vs evaporation threshold"),
        ("optimize", "differential-evolution tuning of free currents"),
        ("validate", "parse configs and run the trap-analysis preflight"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, default=None,
                       help="config JSON (defaults are built in)")
        p.add_argument("--seed", type=int, default=None,
                       help="override sim.seed")
        p.add_argument("--out", type=Path, default=Path("trapload-out"),
                       help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads/processes (results identical)")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       dest="overrides", help="config override, e.g. "
                       "--set sim.duration_s=10")
        if name == "optimize":
            p.add_argument("--resume", type=Path, default=None,
                           help="checkpoint file to resume from")
    return parser


def _prepare(args):
    doc = load_config(args.config)
    if args.overrides:
        doc = apply_overrides(doc, args.overrides)
    if args.seed is not None:
        doc["sim"]["seed"] = int(args.seed)
    layout, currents, lhash = resolve_layout(doc)
    manifest = RunManifest(
        command=args.command,
        config_hash=config_hash(doc),
        layout_hash=lhash,
        seed=int(doc["sim"]["seed"]),
        threads=max(1, args.threads),
    )
    return doc, manifest


def _system_from(doc):
    cfg = build_loading_config(doc)
    return cfg, ZeemanSystem(cfg.layout, cfg.currents, cfg.spin, cfg.constants,
                             gravity=cfg.gravity, bias=cfg.bias)


def cmd_field_map(doc, args, manifest, out):
    cfg, system = _system_from(doc)
    grid = field_map_grid(doc)
    fmap = field_map(system, grid)
    csv_path = write_field_map(out / "field_map.csv", fmap)
    meta = {
        "grid": {"mins_m": list(grid.mins), "maxs_m": list(grid.maxs),
                 "counts": list(grid.counts)},
        "layout_hash": manifest.layout_hash,
        "constants_version": manifest.constants_version,
        "masked_samples": int(fmap.masked.sum()),
    }
    (out / "field_map_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    manifest.outputs = ["field_map.csv", "field_map_meta.json"]
    return {"samples": grid.total, "masked": int(fmap.masked.sum())}


def cmd_analyze_trap(doc, args, manifest, out):
    cfg, system = _system_from(doc)
    char = characterize(system, cfg.analysis,
                        entrance_x=cfg.barrier_reference_x)
    write_trap_csv(out / "trap.csv", char)
    print(trap_summary(char))
    manifest.outputs = ["trap.csv"]
    f = char.frequencies_Hz()
    return {"offset_G": char.offset_field_G, "f_Hz": [f[0], f[1], f[2]],
            "depth_uK": char.depth_uK, "barrier_uK": char.barrier_height_uK,
            "aspect_ratio": char.aspect_ratio}


def cmd_load_sim(doc, args, manifest, out):
    from .reporting import write_ledger_csv, write_snapshot

    cfg = build_loading_config(doc)
    snap_every = int(doc["sim"].get("snapshot_every_records", 0) or 0)
    snapshots = []

    def on_record(engine, record, index):
        if snap_every and index % snap_every == snap_every - 1:
            name = f"snapshot_{index:05d}.csv"
            write_snapshot(out / name, engine.ensemble, record.t, cfg.seed,
                           manifest.config_hash)
            snapshots.append(name)

    result = run_loading(cfg, on_record=on_record)
    write_timeseries(out / "timeseries.csv", result)
    write_ledger_csv(out / "ledger.csv", result.ledger,
                     result.injected_total, result.final_alive)
    summary = {
        "N_final": result.records[-1].N if result.records else 0.0,
        "T_final_uK": result.records[-1].T * 1e6 if result.records else 0.0,
        "injected": result.injected_total,
        "crossed": result.crossed_total,
        "capture_fraction": (result.crossed_total / result.injected_total
                             if result.injected_total else 0.0),
        "ledger": result.ledger,
        "conservation_residual": result.conservation_residual(),
        "dt_s": result.dt,
        "fit": None if result.fit is None else {
            "N_ss": result.fit.N_ss, "tau_load_s": result.fit.tau_load,
            "converged": result.fit.converged,
        },
        "barrier_uK": result.characterization.barrier_height_uK,
        "depth_uK": result.characterization.depth_uK,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    manifest.outputs = ["timeseries.csv", "ledger.csv", "summary.json",
                        *snapshots]
    return {"N_final": summary["N_final"],
            "conservation_residual": summary["conservation_residual"]}


def cmd_scan_barrier(doc, args, manifest, out):
    cfg = build_loading_config(doc)
    sc = doc["scan_barrier"]
    points = scan_barrier(cfg, sc["channel"], sc["currents_A"],
                          float(sc["loading_time_s"]),
                          [int(s) for s in sc["seeds"]],
                          max_workers=max(1, args.threads))
    write_scan_csv(out / "scan_barrier.csv", points, "barrier_uK")
    manifest.outputs = ["scan_barrier.csv"]
    ok_points = [p for p in points if not p.missing]
    return {"points": len(points), "missing": len(points) - len(ok_points)}


def cmd_scan_evap(doc, args, manifest, out):
    cfg = build_loading_config(doc)
    sc = doc["scan_evaporation"]
    points = scan_evaporation(cfg, sc["thresholds_uK"],
                              float(sc["loading_time_s"]),
                              [int(s) for s in sc["seeds"]],
                              max_workers=max(1, args.threads))
    write_scan_csv(out / "scan_evaporation.csv", points, "threshold_uK")
    manifest.outputs = ["scan_evaporation.csv"]
    return {"points": len(points)}


def cmd_optimize(doc, args, manifest, out):
    cfg = build_loading_config(doc)
    op = doc["optimize"]
    de = DEConfig(
        bounds=[tuple(b) for b in op["bounds_A"]],
        population=op["population"],
        weight=op["weight"],
        crossover=op["crossover"],
        generations=op["generations"],
        evals_per_candidate=op["evals_per_candidate"],
        seed=cfg.seed,
    )
    init = None
    if getattr(args, "resume", None):
        try:
            ck_doc = json.loads(Path(args.resume).read_text())
            init = np.asarray(ck_doc["best_params"], dtype=float)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot resume from {args.resume}: {exc}")
    best, char, result = optimize_loading(
        cfg, list(op["free_channels"]), de,
        loading_time=float(op["loading_time_s"]),
        max_workers=max(1, args.threads), init=init,
    )
    dim = len(op["free_channels"])
    header = "gen,best_score,mean_score," + ",".join(
        f"best_{ch}_A" for ch in op["free_channels"])
    rows = [(tr.generation, tr.best_score, tr.mean_score, *tr.best_params)
            for tr in result.trace]
    write_csv(out / "optimize_trace.csv", header, rows)
    best_doc = {
        "best_currents_A": {ch: best[ch] for ch in cfg.layout.channels},
        "best_score": result.best_score,
        "evaluations": result.evaluations,
        "failures": result.failures,
        "barrier_uK": None if char is None else char.barrier_height_uK,
        "offset_G": None if char is None else char.offset_field_G,
    }
    (out / "optimize_best.json").write_text(json.dumps(best_doc, indent=2) + "\n")
    # checkpoint for resume/inspection
    ck = {"generation": len(result.trace), "best_params": list(result.best_params),
          "best_score": result.best_score}
    (out / "checkpoint.json").write_text(json.dumps(ck, indent=2) + "\n")
    manifest.outputs = ["optimize_trace.csv", "optimize_best.json",
                        "checkpoint.json"]
    return {"best_score": result.best_score,
            "best": {ch: best[ch] for ch in op["free_channels"]}}


def cmd_validate(doc, args, manifest, out):
    cfg, system = _system_from(doc)
    char = characterize(system, cfg.analysis,
                        entrance_x=cfg.barrier_reference_x, with_depth=False)
    print(trap_summary(char))
    manifest.outputs = []
    f = char.frequencies_Hz()
    return {"valid": True, "offset_G": char.offset_field_G,
            "barrier_uK": char.barrier_height_uK,
            "f_Hz": [f[0], f[1], f[2]]}


COMMANDS = {
    "field-map": cmd_field_map,
    "analyze-trap": cmd_analyze_trap,
    "load-sim": cmd_load_sim,
    "scan-barrier": cmd_scan_barrier,
    "scan-evap": cmd_scan_evap,
    "optimize": cmd_optimize,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    except Exception:
        pass
    out = args.out
    try:
        doc, manifest = _prepare(args)
    except ConfigError as exc:
        print(json.dumps({"status": "error", "category": "config",
                          "error": str(exc)}))
        return EXIT_CONFIG
    manifest.start(out)
    try:
        payload = COMMANDS[args.command](doc, args, manifest, out)
    except ConfigError as exc:
        manifest.finish(out, "error", exc)
        print(json.dumps({"status": "error", "category": "config",
                          "error": str(exc)}))
        return EXIT_CONFIG
    except TrapLoadError as exc:
        manifest.finish(out, "error", exc)
        category = getattr(exc, "category", "runtime")
        print(json.dumps({"status": "error", "category": category,
                          "error": str(exc)}))
        return EXIT_PHYSICS if category == "physics" else EXIT_RUNTIME
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        manifest.finish(out, "error", exc)
        print(json.dumps({"status": "error", "category": "runtime",
                          "error": f"{type(exc).__name__}: {exc}"}))
        return EXIT_RUNTIME
    manifest.finish(out, "ok")
    print(json.dumps({"status": "ok", "command": args.command, **_json_safe(payload)}))
    return EXIT_OK


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


if __name__ == "__main__":
    sys.exit(main())
