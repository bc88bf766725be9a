import hashlib
import json
from pathlib import Path

import pytest

from traparray import analysis, fields, geometry

CACHE_DIR = Path(__file__).parent / "_cache"


@pytest.fixture(scope="session")
def builtin_layout():
    return geometry.builtin_t_layout()


@pytest.fixture(scope="session")
def builtin_fields(builtin_layout):
    """Solved basis set for the builtin T-layout, cached on disk across runs."""
    CACHE_DIR.mkdir(exist_ok=True)
    key = hashlib.sha256(geometry.builtin_layout_text().encode()).hexdigest()[:16]
    path = CACHE_DIR / f"builtin-{key}.itbf"
    if path.exists():
        return fields.load_cache(path)
    bfs = fields.solve_basis(builtin_layout, tolerance=1e-6)
    fields.save_cache(bfs, path)
    return bfs


@pytest.fixture(scope="session")
def cd_ion():
    return analysis.IonSpecies.cd114()


@pytest.fixture(scope="session")
def rf_drive():
    return analysis.RfDrive.default()


def plate_layout_text(h_um=25.0, lateral_um=2000.0, gap_um=400.0):
    """Parallel plates spanning the full lateral cross-section: hot plate at
    the bottom (1 V when its basis is driven), grounded plate above."""
    nx = int(round(lateral_um / h_um)) + 1
    nz = int(round(gap_um / h_um)) + 3
    doc = {
        "name": "plates",
        "unit": "micrometer",
        "grid": {"origin": [0.0, 0.0, -h_um], "shape": [nx, nx, nz], "spacing": h_um},
        "electrodes": [
            {"name": "rf", "role": "rf",
             "boxes": [[[0.0, 0.0, -h_um], [lateral_um, lateral_um, 0.0]]]},
            {"name": "0", "role": "control",
             "boxes": [[[0.0, 0.0, gap_um], [lateral_um, lateral_um, gap_um + h_um]]]},
        ],
        "zones": [],
    }
    return json.dumps(doc)
