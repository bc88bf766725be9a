import json

import numpy as np
import pytest

from traparray import fields, geometry
from traparray.fields import (
    BadMagicError,
    HeaderMismatchError,
    QuadrupoleField,
    TruncatedFileError,
    VersionMismatchError,
    harmonic_residual,
    load_cache,
    rasterize,
    save_cache,
    solve_basis,
)

from conftest import plate_layout_text


@pytest.fixture(scope="module")
def plates():
    lay = geometry.parse_layout(plate_layout_text(h_um=25.0, lateral_um=1600.0, gap_um=400.0))
    return lay, solve_basis(lay, tolerance=1e-7, method="sor")


class TestPlateCapacitor:
    def test_linear_potential_away_from_walls(self, plates):
        lay, bfs = plates
        phi = bfs.phi("rf")  # the 1 V plate
        xs = lay.grid.axis_coords(0)
        zs = lay.grid.axis_coords(2)
        gap0, gap1 = 0.0, 400e-6
        zsel = (zs > gap0) & (zs < gap1)
        linear = 1.0 - (zs[zsel] - gap0) / (gap1 - gap0)
        # measure at >= 2 gap widths from the side walls, where the fringe is gone
        inset = (xs >= 2 * 400e-6) & (xs <= xs[-1] - 2 * 400e-6)
        block = phi[np.ix_(inset, inset, zsel)]
        err = np.abs(block - linear[None, None, :])
        assert err.max() < 0.01

    def test_gradient_magnitude_and_direction(self, plates):
        lay, bfs = plates
        centre = np.array([800e-6, 800e-6, 200e-6])
        g = bfs.rf_unit_gradient(centre[None, :])[0]
        d = 400e-6
        assert abs(np.linalg.norm(g) - 1.0 / d) / (1.0 / d) < 0.01
        assert g[2] < 0 and abs(g[0]) < 0.01 / d and abs(g[1]) < 0.01 / d

    def test_harmonicity_contract(self, plates):
        lay, bfs = plates
        for name in bfs.names:
            assert harmonic_residual(bfs.phi(name), bfs.mask) <= 1e-7

    def test_maximum_principle(self, plates):
        _, bfs = plates
        assert bfs.data.min() >= 0.0
        assert bfs.data.max() <= 1.0

    def test_unit_voltage_on_own_nodes(self, plates):
        _, bfs = plates
        own = bfs.mask == list(bfs.names).index("0")
        assert np.all(bfs.phi("0")[own] == 1.0)
        assert np.all(bfs.phi("rf")[own] == 0.0)

    def test_superposition_and_linearity(self, plates):
        _, bfs = plates
        pts = np.array([[800e-6, 800e-6, 150e-6], [600e-6, 900e-6, 250e-6]])
        v1 = bfs.control_potential({"0": 2.0}, pts)
        v2 = bfs.control_potential({"0": 3.0}, pts)
        v12 = bfs.control_potential({"0": 5.0}, pts)
        assert np.allclose(v1 + v2, v12, rtol=1e-12, atol=1e-15)
        g1 = bfs.control_gradient({"0": 2.0}, pts)
        assert np.allclose(2.0 * bfs.basis_gradients([1], pts)[0], g1, rtol=1e-12)

    def test_zero_assignment_is_zero(self, plates):
        _, bfs = plates
        pts = np.array([[800e-6, 800e-6, 150e-6]])
        assert bfs.control_potential({}, pts)[0] == 0.0
        assert np.all(bfs.control_gradient({}, pts) == 0.0)

    def test_point_outside_grid_rejected(self, plates):
        _, bfs = plates
        with pytest.raises(ValueError, match="outside the grid"):
            bfs.control_potential({"0": 1.0}, np.array([[10.0, 0.0, 0.0]]))

    def test_sor_and_amg_agree(self):
        lay = geometry.parse_layout(plate_layout_text(h_um=50.0, lateral_um=1000.0, gap_um=400.0))
        a = solve_basis(lay, tolerance=1e-8, method="sor")
        b = solve_basis(lay, tolerance=1e-8, method="amg")
        assert np.abs(a.data - b.data).max() < 1e-6

    def test_refinement_changes_interior_less_than_half_percent(self):
        coarse = geometry.parse_layout(plate_layout_text(h_um=50.0, lateral_um=1200.0, gap_um=400.0))
        fine = geometry.parse_layout(plate_layout_text(h_um=25.0, lateral_um=1200.0, gap_um=400.0))
        a = solve_basis(coarse, tolerance=1e-8)
        b = solve_basis(fine, tolerance=1e-8)
        pts = np.array([[600e-6, 600e-6, z] for z in np.linspace(50e-6, 350e-6, 7)])
        va = a.rf_unit_potential(pts)
        vb = b.rf_unit_potential(pts)
        assert np.abs(va - vb).max() < 0.005

    def test_solver_rejects_degenerate_grid(self):
        doc = json.loads(plate_layout_text())
        doc["grid"]["shape"] = [2, 10, 10]
        lay = geometry.parse_layout(json.dumps(doc))
        with pytest.raises(fields.SolverError, match="degenerate"):
            solve_basis(lay)

    def test_nonconvergence_reports_residual(self, plates):
        lay, _ = plates
        with pytest.raises(fields.ConvergenceError) as err:
            solve_basis(lay, tolerance=1e-12, max_iters=3, method="sor")
        assert err.value.residual is not None and err.value.residual > 1e-12


def test_enclosed_cavity_basis_sums_to_one():
    """Six conductor slabs sealing a cavity: the basis functions sum to 1 inside."""
    h = 20.0
    doc = {
        "name": "cavity",
        "unit": "micrometer",
        "grid": {"origin": [0.0, 0.0, 0.0], "shape": [15, 15, 15], "spacing": h},
        "electrodes": [
            {"name": "rf", "role": "rf", "boxes": [[[40.0, 40.0, 40.0], [240.0, 240.0, 60.0]]]},
            {"name": "cup", "role": "control", "boxes": [
                [[40.0, 40.0, 60.0], [60.0, 240.0, 220.0]],
                [[220.0, 40.0, 60.0], [240.0, 240.0, 220.0]],
                [[60.0, 40.0, 60.0], [220.0, 60.0, 220.0]],
                [[60.0, 220.0, 60.0], [220.0, 240.0, 220.0]],
            ]},
            {"name": "lid", "role": "control", "boxes": [[[40.0, 40.0, 220.0], [240.0, 240.0, 240.0]]]},
        ],
        "zones": [],
    }
    lay = geometry.parse_layout(json.dumps(doc))
    bfs = solve_basis(lay, tolerance=1e-8, method="sor")
    total = bfs.data.sum(axis=0)
    assert total.max() <= 1.0 + 1e-7
    inside = total[5:9, 5:9, 5:9]  # cavity interior
    assert np.abs(inside - 1.0).max() < 1e-5


class TestCacheFormat:
    def test_round_trip_bit_exact(self, plates, tmp_path):
        _, bfs = plates
        path = tmp_path / "f.itbf"
        save_cache(bfs, path)
        again = load_cache(path)
        assert again.names == bfs.names
        assert np.array_equal(again.data, bfs.data)
        assert np.array_equal(again.mask, bfs.mask)
        assert again.grid == bfs.grid
        # saving the reloaded set reproduces the file byte for byte
        path2 = tmp_path / "g.itbf"
        save_cache(again, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic(self, plates, tmp_path):
        _, bfs = plates
        path = tmp_path / "f.itbf"
        save_cache(bfs, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError, match="bad magic"):
            load_cache(path)

    def test_version_mismatch(self, plates, tmp_path):
        _, bfs = plates
        path = tmp_path / "f.itbf"
        save_cache(bfs, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatchError, match="version"):
            load_cache(path)

    def test_truncated_payload_reports_counts(self, plates, tmp_path):
        _, bfs = plates
        path = tmp_path / "f.itbf"
        save_cache(bfs, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 1000])
        with pytest.raises(TruncatedFileError, match=r"expected \d+ bytes"):
            load_cache(path)

    def test_trailing_garbage_rejected(self, plates, tmp_path):
        _, bfs = plates
        path = tmp_path / "f.itbf"
        save_cache(bfs, path)
        with open(path, "ab") as fh:
            fh.write(b"\x00" * 16)
        with pytest.raises(HeaderMismatchError, match="mismatch"):
            load_cache(path)


class TestBuiltinFieldProperties:
    def test_all_basis_in_unit_range(self, builtin_fields):
        assert builtin_fields.data.min() >= 0.0
        assert builtin_fields.data.max() <= 1.0

    def test_basis_sum_bounded_by_one(self, builtin_fields):
        total = builtin_fields.data.sum(axis=0)
        assert total.max() <= 1.0 + 1e-6

    def test_rf_basis_mirror_symmetric_in_x(self, builtin_fields):
        phi = builtin_fields.phi("rf")
        assert np.abs(phi - np.flip(phi, axis=0)).max() < 1e-6

    def test_harmonicity_on_builtin(self, builtin_fields):
        assert harmonic_residual(builtin_fields.phi("6"), builtin_fields.mask) <= 1e-6


def test_quadrupole_override_gradient():
    q = QuadrupoleField(r0=150e-6)
    pts = np.array([[10e-6, -5e-6, 3e-6]])
    g = q.rf_unit_gradient(pts)[0]
    r2 = (150e-6) ** 2
    assert g[0] == pytest.approx(2 * 10e-6 / r2)
    assert g[1] == pytest.approx(2 * 5e-6 / r2)
    assert g[2] == 0.0
