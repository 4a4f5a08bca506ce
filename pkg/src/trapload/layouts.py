"""Chip layout files and the shipped default geometry.

Layout file schema (JSON, lengths in millimeters):

    {
      "name": "...",
      "units": "mm",
      "wires": [
        {"name": "g1", "channel": "g1", "points": [[x,y,z], [x,y,z], ...]},
        ...
      ],
      "currents": {"g1": -105.3, ...}          # amperes, signed
    }

Each wire is a polyline; consecutive point pairs become straight segments
of the wire's channel.  The default layout reconstructs a planar chip with
three guide wires along x (the beam axis), perpendicular barrier/end wires
along y, and the MOT-region wires present at zero current.  Published
sources give only the current values and millimeter-scale wire sizes, so
the pitches below are assumptions tuned such that the quoted currents
produce the quoted trap offset and aspect ratio; they are data, not code,
and can be replaced by editing the layout file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .magnetics import ChipLayout, CurrentSetting, WireSegment

MM = 1e-3


@dataclass(frozen=True)
class DefaultGeometry:
    """Assumed geometry of the shipped layout (mm).

    The guide wires sit in the z = 0 plane; the perpendicular wires sit in
    a second layer at z = +z_perp (farther from the atoms, which live at
    z < 0), reflecting the stacked construction of mesoscopic chips.
    """

    guide_spacing: float = 4.29       # y-distance between adjacent guide wires
    guide_length: float = 140.0       # guide wires span +-guide_length/2 in x
    perp_length: float = 56.0         # perpendicular wires span +-perp_length/2 in y
    z_perp: float = 1.22              # z-offset of the perpendicular-wire layer
    x_p5: float = 0.0                 # entrance barrier wire
    x_p6: float = 9.34
    x_p7: float = 15.52
    x_p8: float = 33.97               # end-wall wire
    x_p1: float = -52.0               # MOT/launch wires, idle in the trap phase
    x_p2: float = -44.0
    x_p3: float = -36.0
    x_p4: float = -28.0
    h_spacing: float = 13.8           # hexapole-compensation wires at +-h_spacing


# Currents for the static-trap phase: guide triplet plus the four
# trap-shaping wires; launch and compensation wires idle.
DEFAULT_CURRENTS = {
    "g1": -105.3,
    "g2": 102.5,
    "g3": -118.3,
    "p1": 0.0,
    "p2": 0.0,
    "p3": 0.0,
    "p4": 0.0,
    "p5": 28.1,
    "p6": 0.5,
    "p7": -3.9,
    "p8": 70.9,
    "h1": 0.0,
    "h2": 0.0,
}


def build_default_layout(geom: DefaultGeometry | None = None
                         ) -> tuple[ChipLayout, CurrentSetting]:
    g = geom or DefaultGeometry()
    half_g = g.guide_length / 2.0
    half_p = g.perp_length / 2.0
    s = g.guide_spacing

    wires = []
    for name, y in (("g1", -s), ("g2", 0.0), ("g3", s)):
        wires.append((name, [[-half_g, y, 0.0], [half_g, y, 0.0]]))
    for name, y in (("h1", -g.h_spacing), ("h2", g.h_spacing)):
        wires.append((name, [[-half_g, y, 0.0], [half_g, y, 0.0]]))
    for name, x in (
        ("p1", g.x_p1), ("p2", g.x_p2), ("p3", g.x_p3), ("p4", g.x_p4),
        ("p5", g.x_p5), ("p6", g.x_p6), ("p7", g.x_p7), ("p8", g.x_p8),
    ):
        wires.append((name, [[x, -half_p, g.z_perp], [x, half_p, g.z_perp]]))

    segments = []
    for name, pts in wires:
        for a, b in zip(pts[:-1], pts[1:]):
            segments.append(WireSegment(
                tuple(c * MM for c in a), tuple(c * MM for c in b), name,
            ))
    layout = ChipLayout(segments, name="default-chip")
    return layout, CurrentSetting(DEFAULT_CURRENTS)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def layout_to_dict(layout: ChipLayout, currents: CurrentSetting | None = None
                   ) -> dict:
    wires: dict[str, list[list[float]]] = {}
    order: list[str] = []
    for seg in layout.segments:
        pts = wires.get(seg.channel)
        a = [c / MM for c in seg.start]
        b = [c / MM for c in seg.end]
        if pts is None:
            wires[seg.channel] = [a, b]
            order.append(seg.channel)
        else:
            pts.append(b)   # polylines are stored as consecutive chains
    doc = {
        "name": layout.name,
        "units": "mm",
        "wires": [
            {"name": ch, "channel": ch, "points": wires[ch]} for ch in order
        ],
    }
    if currents is not None:
        doc["currents"] = {ch: currents[ch] for ch in layout.channels}
    return doc


def layout_from_dict(doc: dict) -> tuple[ChipLayout, CurrentSetting | None]:
    if doc.get("units", "mm") != "mm":
        raise ConfigError(f"unsupported layout units {doc.get('units')!r}")
    wires = doc.get("wires")
    if not wires:
        raise ConfigError("layout file has no wires")
    segments = []
    for wire in wires:
        try:
            channel = wire["channel"]
            points = wire["points"]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed wire entry: {wire!r}") from exc
        if len(points) < 2:
            raise ConfigError(f"wire {channel!r} needs at least 2 points")
        for a, b in zip(points[:-1], points[1:]):
            segments.append(WireSegment(
                tuple(float(c) * MM for c in a),
                tuple(float(c) * MM for c in b),
                channel,
            ))
    layout = ChipLayout(segments, name=doc.get("name", "layout"))
    currents = None
    if "currents" in doc:
        currents = CurrentSetting(doc["currents"])
        currents.validate_for(layout)
    return layout, currents


def load_layout(path: str | Path) -> tuple[ChipLayout, CurrentSetting | None]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"layout file {path} is not valid JSON: {exc}") from exc
    return layout_from_dict(doc)


def save_layout(path: str | Path, layout: ChipLayout,
                currents: CurrentSetting | None = None) -> None:
    Path(path).write_text(json.dumps(layout_to_dict(layout, currents), indent=2)
                          + "\n")


def layout_hash(layout: ChipLayout, currents: CurrentSetting | None = None) -> str:
    """Whitespace-insensitive content hash of a layout (+currents)."""
    doc = layout_to_dict(layout, currents)
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def default_layout_path() -> Path:
    return Path(__file__).parent / "data" / "default_layout.json"
