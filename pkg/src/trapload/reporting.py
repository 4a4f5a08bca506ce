"""Result persistence: CSV writers and the run manifest.

All CSV files use '.' decimals, LF line endings, SI units in headers, and
a fixed %.12g float format, so identical runs produce byte-identical
files.  The manifest records enough to rerun the experiment exactly; its
timestamps are the one intentionally non-reproducible output.
"""

from __future__ import annotations

import json
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .constants import CONSTANTS_VERSION
from .loading import LoadingResult, ScanPoint
from .magnetics import FieldMap
from .trapanalysis import TrapCharacterization

TIMESERIES_HEADER = ("t_s,N,T_uK,n_peak_m3,psd,"
                     "loss_bg,loss_cross,loss_evap,loss_escape")


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.12g" % float(x)


def write_csv(path: Path, header: str, rows) -> Path:
    lines = [header]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", newline="\n")
    return path


def write_timeseries(path: Path, result: LoadingResult) -> Path:
    rows = [
        (r.t, r.N, r.T * 1e6, r.n_peak, r.psd,
         r.loss_bg, r.loss_cross, r.loss_evap, r.loss_escape)
        for r in result.records
    ]
    return write_csv(path, TIMESERIES_HEADER, rows)


def write_field_map(path: Path, fmap: FieldMap) -> Path:
    return write_csv(path, FieldMap.CSV_HEADER, fmap.rows())


def write_snapshot(path: Path, ensemble, t: float, seed: int,
                   config_hash: str) -> Path:
    """Particle dump: x,y,z,vx,vy,vz,weight with a metadata comment line."""
    n = ensemble.n
    meta = f"# time_s={fmt(t)} seed={seed} config={config_hash} n={n}"
    lines = [meta, "x,y,z,vx,vy,vz,weight"]
    pos = ensemble.pos[:n]
    vel = ensemble.vel[:n]
    w = fmt(ensemble.weight)
    for i in range(n):
        lines.append(
            f"{fmt(pos[i,0])},{fmt(pos[i,1])},{fmt(pos[i,2])},"
            f"{fmt(vel[i,0])},{fmt(vel[i,1])},{fmt(vel[i,2])},{w}")
    path.write_text("\n".join(lines) + "\n", newline="\n")
    return path


def write_ledger_csv(path: Path, ledger: dict, injected: float,
                     final_alive: float) -> Path:
    rows = [("injected", injected)]
    rows += sorted(ledger.items())
    rows.append(("final_alive", final_alive))
    return write_csv(path, "channel,weighted_atoms", rows)


def write_trap_csv(path: Path, char: TrapCharacterization) -> Path:
    header = ("min_x_m,min_y_m,min_z_m,offset_G,fx_Hz,fy_Hz,fz_Hz,"
              "depth_uK,barrier_uK,aspect_ratio")
    f = char.frequencies_Hz()
    row = (*char.minimum_position, char.offset_field_G, f[0], f[1], f[2],
           char.depth_uK, char.barrier_height_uK, char.aspect_ratio)
    return write_csv(path, header, [row])


def write_scan_csv(path: Path, points: list[ScanPoint], x_name: str) -> Path:
    n_seeds = max((len(p.N_seeds) for p in points), default=0)
    header = f"{x_name},control,N_mean,N_std,missing" + "".join(
        f",N_seed{i}" for i in range(n_seeds))
    rows = []
    for p in points:
        seeds = list(p.N_seeds) + [float("nan")] * (n_seeds - len(p.N_seeds))
        rows.append((p.x_value, p.control, p.N_mean, p.N_std,
                     int(p.missing), *seeds))
    return write_csv(path, header, rows)


def trap_summary(char: TrapCharacterization) -> str:
    f = char.frequencies_Hz()
    lines = [
        "trap characterization",
        f"  minimum position [mm]: ({char.minimum_position[0]*1e3:.3f}, "
        f"{char.minimum_position[1]*1e3:.3f}, {char.minimum_position[2]*1e3:.3f})",
        f"  offset field:          {char.offset_field_G:.4f} G",
        f"  frequencies:           ({f[0]:.1f}, {f[1]:.1f}, {f[2]:.2f}) Hz",
        f"  aspect ratio:          {char.aspect_ratio:.1f}",
        f"  trap depth:            {char.depth_uK:.1f} uK",
        f"  entrance barrier:      {char.barrier_height_uK:.1f} uK "
        f"(guide-floor reference)",
    ]
    return "\n".join(lines)


@dataclass
class RunManifest:
    """Provenance of one CLI run; written before and finalized after."""

    command: str
    config_hash: str
    layout_hash: str
    seed: int
    threads: int
    constants_version: str = CONSTANTS_VERSION
    tool_version: str = __version__
    started_utc: str = ""
    finished_utc: str = ""
    status: str = "running"
    outputs: list[str] = field(default_factory=list)
    error: str | None = None
    error_category: str | None = None

    def path(self, out_dir: Path) -> Path:
        return out_dir / "manifest.json"

    def write(self, out_dir: Path) -> None:
        doc = {
            "command": self.command,
            "config_hash": self.config_hash,
            "layout_hash": self.layout_hash,
            "seed": self.seed,
            "threads": self.threads,
            "constants_version": self.constants_version,
            "tool_version": self.tool_version,
            "python": platform.python_version(),
            "started_utc": self.started_utc,
            "finished_utc": self.finished_utc,
            "status": self.status,
            "outputs": self.outputs,
        }
        if self.error is not None:
            doc["error"] = self.error
            doc["error_category"] = self.error_category
        self.path(out_dir).write_text(json.dumps(doc, indent=2) + "\n")

    def start(self, out_dir: Path) -> None:
        self.started_utc = datetime.now(timezone.utc).isoformat()
        out_dir.mkdir(parents=True, exist_ok=True)
        self.write(out_dir)

    def finish(self, out_dir: Path, status: str = "ok",
               error: Exception | None = None) -> None:
        self.finished_utc = datetime.now(timezone.utc).isoformat()
        self.status = status
        if error is not None:
            self.error = f"{type(error).__name__}: {error}"
            self.error_category = getattr(error, "category", "runtime")
        self.write(out_dir)
