"""Trap-array layouts: electrode solids, zone markers, and the builtin T-junction.

A layout is a stack of three conductor layers along z.  The middle layer carries
the rf electrode with a channel cut through it; the outer layers carry segmented
control electrodes (and grounded filler segments) that shape the axial wells.
Everything is axis-aligned boxes so the field solver's boundary is exact on the
grid.

Coordinates follow the array figure convention: x runs along the top of the T,
y along the stem, z normal to the layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_NODE_CAP = 8_000_000

_UNIT_SCALES = {"micrometer": 1e-6, "meter": 1.0}
_ROLES = ("rf", "control", "ground")


class LayoutError(Exception):
    """Base class for layout parsing/validation failures."""


class LayoutSyntaxError(LayoutError):
    """Malformed layout text; carries line/column when known."""

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class LayoutSemanticError(LayoutError):
    """Well-formed text that violates a layout invariant."""


@dataclass(frozen=True)
class GridSpec:
    """Regular solver grid.  origin/spacing in meters, shape in nodes."""

    origin: tuple[float, float, float]
    shape: tuple[int, int, int]
    spacing: float

    @property
    def node_count(self) -> int:
        nx, ny, nz = self.shape
        return nx * ny * nz

    @property
    def max_corner(self) -> tuple[float, float, float]:
        return tuple(self.origin[i] + (self.shape[i] - 1) * self.spacing for i in range(3))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.shape[axis])

    def contains(self, point) -> bool:
        hi = self.max_corner
        return all(self.origin[i] <= point[i] <= hi[i] for i in range(3))


@dataclass(frozen=True)
class Electrode:
    """Named conductor made of one or more axis-aligned boxes (layout units)."""

    name: str
    role: str
    boxes: tuple[tuple[tuple[float, float, float], tuple[float, float, float]], ...]

    def contains(self, point_units) -> bool:
        for lo, hi in self.boxes:
            if all(lo[i] <= point_units[i] <= hi[i] for i in range(3)):
                return True
        return False


@dataclass(frozen=True)
class ZoneMarker:
    label: str
    position: tuple[float, float, float]  # layout units


@dataclass(frozen=True)
class TrapLayout:
    """Immutable trap description.

    Electrode boxes and zone positions are stored verbatim in layout units so
    that serialization round-trips bit-exactly; ``unit_scale`` converts to
    meters.  ``grid`` is the derived solver grid in SI units.
    """

    name: str
    unit: str
    unit_scale: float
    grid_units: dict
    electrodes: tuple[Electrode, ...]
    zones: tuple[ZoneMarker, ...]
    grid: GridSpec = field(compare=False)

    def electrode(self, name: str) -> Electrode:
        for e in self.electrodes:
            if e.name == name:
                return e
        raise KeyError(f"no electrode named '{name}'")

    @property
    def rf_electrode(self) -> Electrode:
        return next(e for e in self.electrodes if e.role == "rf")

    def control_names(self) -> list[str]:
        return [e.name for e in self.electrodes if e.role == "control"]

    def ground_names(self) -> list[str]:
        return [e.name for e in self.electrodes if e.role == "ground"]

    def zone(self, label: str) -> ZoneMarker:
        for z in self.zones:
            if z.label == label:
                return z
        raise KeyError(f"unknown zone label '{label}'")


def zone_position(layout: TrapLayout, label: str) -> np.ndarray:
    """Marker position of ``label`` in meters."""
    z = layout.zone(label)
    return np.asarray(z.position, dtype=float) * layout.unit_scale


# ---------------------------------------------------------------------------
# Parsing / serialization.  The layout file is JSON with a fixed key order:
#   name, unit ("micrometer"|"meter"), grid {origin, shape, spacing},
#   electrodes [{name, role, boxes [[min3],[max3]]}], zones [{label, position}].
# ---------------------------------------------------------------------------

def parse_layout(text: str, node_cap: int = DEFAULT_NODE_CAP) -> TrapLayout:
    """Parse layout text, validating every layout invariant.

    Raises LayoutSyntaxError with line/column for malformed text and
    LayoutSemanticError naming the violated invariant otherwise.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LayoutSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise LayoutSemanticError("layout document must be an object")

    for key in ("name", "unit", "grid", "electrodes", "zones"):
        if key not in doc:
            raise LayoutSemanticError(f"missing top-level field '{key}'")

    unit = doc["unit"]
    if unit not in _UNIT_SCALES:
        raise LayoutSemanticError(f"unknown unit '{unit}' (expected 'micrometer' or 'meter')")
    scale = _UNIT_SCALES[unit]

    grid_units = doc["grid"]
    for key in ("origin", "shape", "spacing"):
        if key not in grid_units:
            raise LayoutSemanticError(f"grid is missing '{key}'")
    shape = tuple(int(n) for n in grid_units["shape"])
    spacing_units = float(grid_units["spacing"])
    if spacing_units <= 0:
        raise LayoutSemanticError("grid spacing must be > 0")
    if any(n <= 0 for n in shape):
        raise LayoutSemanticError("grid shape entries must be positive")
    if shape[0] * shape[1] * shape[2] > node_cap:
        raise LayoutSemanticError(
            f"grid has {shape[0] * shape[1] * shape[2]} nodes, above the cap of {node_cap}"
        )
    origin_units = tuple(float(v) for v in grid_units["origin"])
    grid = GridSpec(
        origin=tuple(v * scale for v in origin_units),
        shape=shape,
        spacing=spacing_units * scale,
    )

    electrodes = []
    for entry in doc["electrodes"]:
        name = str(entry.get("name", ""))
        if not name:
            raise LayoutSemanticError("electrode with empty name")
        role = entry.get("role")
        if role not in _ROLES:
            raise LayoutSemanticError(f"electrode '{name}' has unknown role '{role}'")
        boxes = []
        for box in entry.get("boxes", []):
            lo = tuple(float(v) for v in box[0])
            hi = tuple(float(v) for v in box[1])
            if not all(lo[i] < hi[i] for i in range(3)):
                raise LayoutSemanticError(
                    f"electrode '{name}' has a box with min >= max on some axis"
                )
            boxes.append((lo, hi))
        if not boxes:
            raise LayoutSemanticError(f"electrode '{name}' has no boxes")
        electrodes.append(Electrode(name=name, role=role, boxes=tuple(boxes)))

    names = [e.name for e in electrodes]
    for n in names:
        if names.count(n) > 1:
            raise LayoutSemanticError(f"duplicate electrode '{n}'")
    rf_count = sum(1 for e in electrodes if e.role == "rf")
    if rf_count != 1:
        raise LayoutSemanticError(f"expected exactly one rf electrode, found {rf_count}")

    _check_no_overlap(electrodes)

    zones = []
    for entry in doc["zones"]:
        label = str(entry.get("label", ""))
        if len(label) != 1 or not ("a" <= label <= "k"):
            raise LayoutSemanticError(f"zone label '{label}' is not a single letter a-k")
        pos = tuple(float(v) for v in entry["position"])
        zones.append(ZoneMarker(label=label, position=pos))
    labels = [z.label for z in zones]
    for lbl in labels:
        if labels.count(lbl) > 1:
            raise LayoutSemanticError(f"duplicate zone label '{lbl}'")

    lo_u = origin_units
    hi_u = tuple(origin_units[i] + (shape[i] - 1) * spacing_units for i in range(3))
    for z in zones:
        if not all(lo_u[i] <= z.position[i] <= hi_u[i] for i in range(3)):
            raise LayoutSemanticError(f"zone '{z.label}' lies outside the grid bounding box")
        for e in electrodes:
            if e.contains(z.position):
                raise LayoutSemanticError(
                    f"zone '{z.label}' lies inside electrode '{e.name}'"
                )

    return TrapLayout(
        name=str(doc["name"]),
        unit=unit,
        unit_scale=scale,
        grid_units={"origin": list(origin_units), "shape": list(shape), "spacing": spacing_units},
        electrodes=tuple(electrodes),
        zones=tuple(zones),
        grid=grid,
    )


def _check_no_overlap(electrodes) -> None:
    """Interior intersection between boxes of different electrodes is an error."""
    for i, a in enumerate(electrodes):
        for b in electrodes[i + 1:]:
            for lo_a, hi_a in a.boxes:
                for lo_b, hi_b in b.boxes:
                    if all(
                        min(hi_a[k], hi_b[k]) > max(lo_a[k], lo_b[k]) for k in range(3)
                    ):
                        raise LayoutSemanticError(
                            f"electrodes '{a.name}' and '{b.name}' overlap"
                        )


def serialize_layout(layout: TrapLayout) -> str:
    """Canonical layout text; parse(serialize(.)) is the identity."""
    doc = {
        "name": layout.name,
        "unit": layout.unit,
        "grid": {
            "origin": list(layout.grid_units["origin"]),
            "shape": list(layout.grid_units["shape"]),
            "spacing": layout.grid_units["spacing"],
        },
        "electrodes": [
            {
                "name": e.name,
                "role": e.role,
                "boxes": [[list(lo), list(hi)] for lo, hi in e.boxes],
            }
            for e in layout.electrodes
        ],
        "zones": [
            {"label": z.label, "position": list(z.position)} for z in layout.zones
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Builtin T-junction layout.
#
# Dimensions the source experiment does not pin down are engineering choices,
# kept grid-aligned at the default 20 um spacing.  The channel cross-section
# (240 um between the outer layers' inner edges, 280 um rf-layer slit, 120 um
# substrates, 80 um spacer gaps) was tuned numerically so that the standard
# drive (360 V at 48 MHz on Cd+) reproduces the reported transverse secular
# frequency and junction hump scale; the axial segmentation is 400 um
# segments on a 440 um pitch.
#
# Electrode numbering (a choice; the experiment's full map is not published):
#   stem rows, top layer, (left, right) flanking each stem zone:
#     a=(0,1)  b=(4,5)  c=(2,3)  d=(6,7); bottom-layer twins are +20.
#   8/17 are short corner electrodes (both layers) just below the bar, right
#   and left of the stem mouth; 9/16 are the above-bar segments (both layers)
#   over zones i and f.  Outer arm segments (both layers, above/below):
#     j=(10,11)  k=(12,13)  g=(18,19)  h=(14,15).
# This satisfies: 6,7,26,27 flank zone d; 8,9,16,17 flank the junction arms;
# the separation wedge pair at b is (4,5) with (0,1) one zone below.
# ---------------------------------------------------------------------------

# All numbers in micrometers.
_SEG = 400.0            # control segment axial extent
_GAP = 40.0             # gap between adjacent segments
_PITCH = _SEG + _GAP
_SLIT_OUTER = 120.0     # outer layers: half-width of the slit over the channel
_SLIT_RF = 140.0        # rf layer: half-width of the channel
_SEG_LATERAL = 400.0    # how far control segments extend away from the slit
_RF_HALF_THICK = 60.0
_LAYER_GAP = 80.0
_LAYER_THICK = 120.0
_STUB = 100.0           # axial extent of the corner electrodes 8/17

_ZT = (_RF_HALF_THICK + _LAYER_GAP, _RF_HALF_THICK + _LAYER_GAP + _LAYER_THICK)  # (140, 260)
_ZB = (-_ZT[1], -_ZT[0])

_XSTEM = _SLIT_OUTER                  # stem segments: inner edge at the slit
_XSTEM_OUT = _XSTEM + _SEG_LATERAL
_G2_HALF = 80.0                       # above-junction ground cap half-width
_COL0 = _G2_HALF + _GAP               # 120: first bar column hugs the junction cap
_SEG_ARM0 = 800.0                     # first arm segments are long, so the pinned
_COL1 = _COL0 + _SEG_ARM0             # +-10 V end state is soft along the arm axis
_YBAR = _SLIT_OUTER                   # bar segments: inner edge at the slit
_YBAR_OUT = _YBAR + _SEG_LATERAL

_GRID_XMAX = 2060.0
_GRID_YMIN, _GRID_YMAX = -2560.0, 700.0
_GRID_ZMAX = 520.0
_SPACING = 20.0


def _box(x0, x1, y0, y1, z_range):
    return [[float(x0), float(y0), float(z_range[0])], [float(x1), float(y1), float(z_range[1])]]


def builtin_layout_text() -> str:
    """Canonical text of the builtin T-junction layout."""
    electrodes = []

    def add(name, role, *boxes):
        electrodes.append({"name": name, "role": role, "boxes": list(boxes)})

    # rf electrode: middle-layer slab minus the T channel (3 boxes).
    add(
        "rf",
        "rf",
        _box(-_GRID_XMAX, _GRID_XMAX, _SLIT_RF, _GRID_YMAX, (-_RF_HALF_THICK, _RF_HALF_THICK)),
        _box(-_GRID_XMAX, -_SLIT_RF, _GRID_YMIN, -_SLIT_RF, (-_RF_HALF_THICK, _RF_HALF_THICK)),
        _box(_SLIT_RF, _GRID_XMAX, _GRID_YMIN, -_SLIT_RF, (-_RF_HALF_THICK, _RF_HALF_THICK)),
    )

    # Stem rows (top layer + bottom twins at +20).  The d row starts one gap
    # below the corner stubs, which themselves sit one gap below the bar slit.
    stub_y0 = -(_SLIT_OUTER + _GAP)             # -160
    d_top = stub_y0 - _STUB - _GAP              # -260
    row_tops = {"d": d_top}
    row_tops["c"] = d_top - _PITCH
    row_tops["b"] = d_top - 2 * _PITCH
    row_tops["a"] = d_top - 3 * _PITCH
    stem_pairs = {"a": (0, 1), "c": (2, 3), "b": (4, 5), "d": (6, 7)}
    for zone_label in ("a", "b", "c", "d"):
        y1 = row_tops[zone_label]
        y0 = y1 - _SEG
        nl, nr = stem_pairs[zone_label]
        add(str(nl), "control", _box(-_XSTEM_OUT, -_XSTEM, y0, y1, _ZT))
        add(str(nr), "control", _box(_XSTEM, _XSTEM_OUT, y0, y1, _ZT))
        add(str(nl + 20), "control", _box(-_XSTEM_OUT, -_XSTEM, y0, y1, _ZB))
        add(str(nr + 20), "control", _box(_XSTEM, _XSTEM_OUT, y0, y1, _ZB))

    # Corner electrodes 8 (right) / 17 (left): short segments on both layers,
    # aligned under the i/f columns.
    for name, sgn in (("8", 1), ("17", -1)):
        xa, xb = sorted((sgn * _COL0, sgn * _COL1))
        add(
            name, "control",
            _box(xa, xb, stub_y0 - _STUB, stub_y0, _ZT),
            _box(xa, xb, stub_y0 - _STUB, stub_y0, _ZB),
        )

    # Above-bar segments over i and f (both layers).
    for name, sgn in (("9", 1), ("16", -1)):
        xa, xb = sorted((sgn * _COL0, sgn * _COL1))
        add(
            name, "control",
            _box(xa, xb, _YBAR, _YBAR_OUT, _ZT),
            _box(xa, xb, _YBAR, _YBAR_OUT, _ZB),
        )

    # Outer arm columns: (above, below) segments spanning both layers.
    arm_numbers = {  # (above, below) per signed column
        ("j", 1): (10, 11), ("k", 1): (12, 13),
        ("j", -1): (18, 19), ("k", -1): (14, 15),
    }
    col_x = {"j": _COL1 + _GAP, "k": _COL1 + _GAP + _PITCH}
    for (label, sgn), (na, nb) in arm_numbers.items():
        x0 = col_x[label]
        xa, xb = sorted((sgn * x0, sgn * (x0 + _SEG)))
        add(
            str(na), "control",
            _box(xa, xb, _YBAR, _YBAR_OUT, _ZT),
            _box(xa, xb, _YBAR, _YBAR_OUT, _ZB),
        )
        add(
            str(nb), "control",
            _box(xa, xb, -_YBAR_OUT, -_YBAR, _ZT),
            _box(xa, xb, -_YBAR_OUT, -_YBAR, _ZB),
        )

    # Grounded filler segments: stem end, above the junction, and arm ends.
    stem_end_top = row_tops["a"] - _PITCH
    add(
        "G1", "ground",
        _box(-_XSTEM_OUT, -_XSTEM, stem_end_top - _SEG, stem_end_top, _ZT),
        _box(_XSTEM, _XSTEM_OUT, stem_end_top - _SEG, stem_end_top, _ZT),
        _box(-_XSTEM_OUT, -_XSTEM, stem_end_top - _SEG, stem_end_top, _ZB),
        _box(_XSTEM, _XSTEM_OUT, stem_end_top - _SEG, stem_end_top, _ZB),
    )
    add(
        "G2", "ground",
        _box(-_G2_HALF, _G2_HALF, _YBAR, _YBAR_OUT, _ZT),
        _box(-_G2_HALF, _G2_HALF, _YBAR, _YBAR_OUT, _ZB),
    )
    arm_end0 = col_x["k"] + _SEG + _GAP
    for name, sgn in (("G3", 1), ("G4", -1)):
        xa, xb = sorted((sgn * arm_end0, sgn * (arm_end0 + _LAYER_THICK)))
        add(
            name, "ground",
            _box(xa, xb, _YBAR, _YBAR_OUT, _ZT),
            _box(xa, xb, -_YBAR_OUT, -_YBAR, _ZT),
            _box(xa, xb, _YBAR, _YBAR_OUT, _ZB),
            _box(xa, xb, -_YBAR_OUT, -_YBAR, _ZB),
        )

    def _mid(y_top):
        return y_top - _SEG / 2.0

    i_x = _COL0 + _SEG_ARM0 / 2.0
    j_x = col_x["j"] + _SEG / 2.0
    k_x = col_x["k"] + _SEG / 2.0
    zones = [
        {"label": "a", "position": [0.0, _mid(row_tops["a"]), 0.0]},
        {"label": "b", "position": [0.0, _mid(row_tops["b"]), 0.0]},
        {"label": "c", "position": [0.0, _mid(row_tops["c"]), 0.0]},
        {"label": "d", "position": [0.0, _mid(row_tops["d"]), 0.0]},
        {"label": "e", "position": [0.0, 0.0, 0.0]},
        {"label": "f", "position": [-i_x, 0.0, 0.0]},
        {"label": "g", "position": [-j_x, 0.0, 0.0]},
        {"label": "h", "position": [-k_x, 0.0, 0.0]},
        {"label": "i", "position": [i_x, 0.0, 0.0]},
        {"label": "j", "position": [j_x, 0.0, 0.0]},
        {"label": "k", "position": [k_x, 0.0, 0.0]},
    ]

    nx = int(round(2 * _GRID_XMAX / _SPACING)) + 1
    ny = int(round((_GRID_YMAX - _GRID_YMIN) / _SPACING)) + 1
    nz = int(round(2 * _GRID_ZMAX / _SPACING)) + 1
    doc = {
        "name": "t-junction",
        "unit": "micrometer",
        "grid": {
            "origin": [-_GRID_XMAX, _GRID_YMIN, -_GRID_ZMAX],
            "shape": [nx, ny, nz],
            "spacing": _SPACING,
        },
        "electrodes": electrodes,
        "zones": zones,
    }
    return json.dumps(doc, indent=2) + "\n"


def builtin_t_layout() -> TrapLayout:
    """The default three-layer T-junction array with zones a-k."""
    return parse_layout(builtin_layout_text())
