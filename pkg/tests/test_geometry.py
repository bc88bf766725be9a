import json

import numpy as np
import pytest

from traparray import fields, geometry
from traparray.geometry import (
    LayoutSemanticError,
    LayoutSyntaxError,
    builtin_layout_text,
    builtin_t_layout,
    parse_layout,
    serialize_layout,
    zone_position,
)

MINIMAL = {
    "name": "mini",
    "unit": "micrometer",
    "grid": {"origin": [0.0, 0.0, 0.0], "shape": [11, 11, 11], "spacing": 10.0},
    "electrodes": [
        {"name": "rf", "role": "rf", "boxes": [[[0.0, 0.0, 0.0], [100.0, 100.0, 10.0]]]},
        {"name": "1", "role": "control", "boxes": [[[0.0, 0.0, 90.0], [100.0, 100.0, 100.0]]]},
    ],
    "zones": [{"label": "a", "position": [50.0, 50.0, 50.0]}],
}


def test_parse_minimal_layout():
    lay = parse_layout(json.dumps(MINIMAL))
    assert len(lay.electrodes) == 2
    assert lay.rf_electrode.name == "rf"
    assert lay.control_names() == ["1"]


def test_duplicate_electrode_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["electrodes"].append(
        {"name": "1", "role": "control", "boxes": [[[0.0, 0.0, 40.0], [10.0, 10.0, 50.0]]]}
    )
    with pytest.raises(LayoutSemanticError, match="duplicate electrode '1'"):
        parse_layout(json.dumps(doc))


def test_syntax_error_reports_position():
    with pytest.raises(LayoutSyntaxError, match=r"line \d+"):
        parse_layout('{"name": "x", unit: micrometer}')


def test_overlapping_electrodes_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["electrodes"][1]["boxes"] = [[[0.0, 0.0, 5.0], [50.0, 50.0, 20.0]]]
    with pytest.raises(LayoutSemanticError, match="overlap"):
        parse_layout(json.dumps(doc))


def test_zone_inside_electrode_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["zones"][0]["position"] = [50.0, 50.0, 5.0]
    with pytest.raises(LayoutSemanticError, match="inside electrode"):
        parse_layout(json.dumps(doc))


def test_node_cap_enforced():
    doc = json.loads(json.dumps(MINIMAL))
    doc["grid"]["shape"] = [300, 300, 300]
    with pytest.raises(LayoutSemanticError, match="cap"):
        parse_layout(json.dumps(doc))


def test_missing_rf_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["electrodes"][0]["role"] = "control"
    doc["electrodes"][0]["name"] = "2"
    with pytest.raises(LayoutSemanticError, match="rf"):
        parse_layout(json.dumps(doc))


class TestBuiltinLayout:
    def test_electrode_inventory(self, builtin_layout):
        lay = builtin_layout
        controls = lay.control_names()
        assert len(controls) == 28
        assert sorted(controls, key=int) == [str(n) for n in range(28)]
        assert len(lay.ground_names()) >= 1
        assert lay.rf_electrode.name == "rf"

    def test_zones_a_through_k(self, builtin_layout):
        assert sorted(z.label for z in builtin_layout.zones) == list("abcdefghijk")

    def test_central_segment_axial_extent_400um(self, builtin_layout):
        # the stem segment pair flanking zone b spans 400 um along y
        e4 = builtin_layout.electrode("4")
        (lo, hi) = e4.boxes[0][0], e4.boxes[0][1]
        assert hi[1] - lo[1] == pytest.approx(400.0)

    def test_zone_e_at_channel_intersection(self, builtin_layout):
        e = zone_position(builtin_layout, "e")
        assert np.allclose(e, 0.0)

    def test_zone_d_and_i_fit_camera_field_of_view(self, builtin_layout):
        d = zone_position(builtin_layout, "d")
        i = zone_position(builtin_layout, "i")
        delta = np.abs(d - i)
        assert delta[0] <= 550e-6 and delta[1] <= 550e-6

    def test_unknown_zone_label(self, builtin_layout):
        with pytest.raises(KeyError, match="'q'"):
            zone_position(builtin_layout, "q")

    def test_roundtrip_identity(self):
        text = builtin_layout_text()
        assert serialize_layout(parse_layout(text)) == text

    def test_roundtrip_is_stable_on_minimal(self):
        text = serialize_layout(parse_layout(json.dumps(MINIMAL)))
        assert serialize_layout(parse_layout(text)) == text

    def test_markers_in_vacuum(self, builtin_layout):
        lay = builtin_layout
        for z in lay.zones:
            for e in lay.electrodes:
                assert not e.contains(z.position), f"zone {z.label} inside {e.name}"

    def test_mirror_symmetry_in_x(self, builtin_layout):
        metal = fields.rasterize(builtin_layout) >= 0
        assert metal.shape[0] % 2 == 1  # x = 0 lies on a node plane
        assert np.array_equal(metal, np.flip(metal, axis=0))

    def test_flanking_electrodes_of_zone_d(self, builtin_layout):
        """6,7 (and twins 26,27) sit left/right of the stem channel at d's height."""
        d = builtin_layout.zone("d").position
        for name in ("6", "7", "26", "27"):
            boxes = builtin_layout.electrode(name).boxes
            assert any(lo[1] <= d[1] <= hi[1] for lo, hi in boxes), name
            assert all(lo[0] > d[0] or hi[0] < d[0] for lo, hi in boxes), name

    def test_junction_arm_electrodes(self, builtin_layout):
        """8/9 flank the right-arm entrance, 16/17 the left."""
        i = builtin_layout.zone("i").position
        f = builtin_layout.zone("f").position
        for name, zone in (("8", i), ("9", i), ("16", f), ("17", f)):
            boxes = builtin_layout.electrode(name).boxes
            assert any(lo[0] <= zone[0] <= hi[0] for lo, hi in boxes), name
