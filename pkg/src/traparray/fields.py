"""Electrostatic basis fields: one Laplace solution per electrode, superposable.

Each electrode i gets the dimensionless potential phi_i solving the discrete
Laplace equation with phi_i = 1 on its own nodes, 0 on every other conductor
and on the outer box (Dirichlet).  Physical potentials are Sum_i V_i(t) phi_i.

The reference solver is red-black SOR; large grids use an algebraic-multigrid
preconditioned CG (pyamg) on the identical 7-point stencil, so both paths
converge to the same discrete solution.  Convergence is always verified
against the contract residual max|phi - mean(6 neighbours)| <= tolerance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridSpec, TrapLayout

VACUUM = -1
BOUNDARY = -2


class SolverError(Exception):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CacheFormatError(Exception):
    """Base class for field-cache file rejections."""


class BadMagicError(CacheFormatError):
    pass


class VersionMismatchError(CacheFormatError):
    pass


class TruncatedFileError(CacheFormatError):
    pass


class HeaderMismatchError(CacheFormatError):
    pass


def role_of(name: str) -> str:
    """Electrode role by naming convention ('rf', 'G*' grounded, else control)."""
    if name == "rf":
        return "rf"
    if name.startswith("G"):
        return "ground"
    return "control"


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def rasterize(layout: TrapLayout) -> np.ndarray:
    """Node classes on the layout grid.

    Returns an int16 array of shape grid.shape holding the electrode index
    (position in layout.electrodes), VACUUM, or BOUNDARY for outer-box nodes
    not claimed by an electrode.  Box membership is tested in layout units so
    grid-aligned boxes rasterize exactly.
    """
    gu = layout.grid_units
    shape = tuple(gu["shape"])
    h = gu["spacing"]
    axes = [gu["origin"][a] + h * np.arange(shape[a]) for a in range(3)]
    mask = np.full(shape, VACUUM, dtype=np.int16)
    for idx, elec in enumerate(layout.electrodes):
        for lo, hi in elec.boxes:
            sel = []
            for a in range(3):
                inside = (axes[a] >= lo[a]) & (axes[a] <= hi[a])
                sel.append(inside)
            region = np.ix_(*[np.nonzero(s)[0] for s in sel])
            claim = mask[region]
            mask[region] = np.where(claim == VACUUM, np.int16(idx), claim)
    for a in range(3):
        face = [slice(None)] * 3
        for end in (0, -1):
            face[a] = end
            f = mask[tuple(face)]
            f[f == VACUUM] = BOUNDARY
    return mask


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def _neighbour_mean(phi: np.ndarray) -> np.ndarray:
    return (
        phi[:-2, 1:-1, 1:-1] + phi[2:, 1:-1, 1:-1]
        + phi[1:-1, :-2, 1:-1] + phi[1:-1, 2:, 1:-1]
        + phi[1:-1, 1:-1, :-2] + phi[1:-1, 1:-1, 2:]
    ) / 6.0


def harmonic_residual(phi: np.ndarray, mask: np.ndarray) -> float:
    """max |phi - mean(6 neighbours)| over vacuum nodes."""
    vac = mask[1:-1, 1:-1, 1:-1] == VACUUM
    if not vac.any():
        return 0.0
    mean = _neighbour_mean(phi)
    return float(np.abs(phi[1:-1, 1:-1, 1:-1][vac] - mean[vac]).max())


def optimal_sor_omega(shape) -> float:
    rho = sum(np.cos(np.pi / max(n - 1, 2)) for n in shape) / 3.0
    return 2.0 / (1.0 + np.sqrt(max(1.0 - rho * rho, 0.0)))


def _solve_sor(phi, mask, tolerance, max_iters, check_every=25):
    vac_core = mask[1:-1, 1:-1, 1:-1] == VACUUM
    ii, jj, kk = np.indices(vac_core.shape, sparse=True)
    parity = (ii + jj + kk) % 2 == 0
    red = vac_core & parity
    black = vac_core & ~parity
    omega = optimal_sor_omega(phi.shape)
    core = phi[1:-1, 1:-1, 1:-1]
    residual = np.inf
    for it in range(1, max_iters + 1):
        for colour in (red, black):
            mean = _neighbour_mean(phi)
            core[colour] += omega * (mean[colour] - core[colour])
        if it % check_every == 0 or it == max_iters:
            mean = _neighbour_mean(phi)
            residual = float(np.abs(core[vac_core] - mean[vac_core]).max())
            if residual <= tolerance:
                return it, residual
    raise ConvergenceError(
        f"SOR did not reach residual {tolerance:g} within {max_iters} iterations "
        f"(final residual {residual:g})",
        residual=residual,
    )


class _AmgContext:
    """Shared 7-point operator over vacuum nodes, reused for every electrode."""

    def __init__(self, mask):
        import scipy.sparse as sp

        self.mask = mask
        vac = mask == VACUUM
        self.vac = vac
        n = int(vac.sum())
        ids = np.full(mask.shape, -1, dtype=np.int64)
        ids[vac] = np.arange(n)
        rows, cols = [], []
        for axis in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            a = ids[tuple(lo)]
            b = ids[tuple(hi)]
            link = (a >= 0) & (b >= 0)
            rows.append(a[link])
            cols.append(b[link])
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        data = -np.ones(r.size)
        off = sp.coo_matrix((data, (r, c)), shape=(n, n))
        eye = sp.identity(n, format="coo") * 6.0
        self.A = (eye + off + off.T).tocsr()
        self.ids = ids
        import pyamg

        self.ml = pyamg.smoothed_aggregation_solver(self.A, max_coarse=500)

    def rhs_for(self, electrode_index):
        """Sum of Dirichlet neighbour values (1 on the target electrode)."""
        target = self.mask == electrode_index
        b = np.zeros(self.vac.shape)
        for axis in range(3):
            for shift in (1, -1):
                b[self.vac] += np.roll(target, shift, axis=axis)[self.vac]
        # roll wraps around the box faces, but face nodes are never vacuum
        return b[self.vac].astype(float)

    def solve(self, electrode_index, tolerance, max_iters):
        b = self.rhs_for(electrode_index)
        x = np.zeros_like(b)
        iters = 0
        tol = 1e-9
        for _ in range(6):
            res_hist = []
            x = self.ml.solve(
                b, x0=x, tol=tol, accel="cg", maxiter=max(max_iters, 10),
                residuals=res_hist,
            )
            iters += max(len(res_hist) - 1, 1)
            phi = np.zeros(self.mask.shape)
            phi[self.vac] = x
            phi[self.mask == electrode_index] = 1.0
            residual = harmonic_residual(phi, self.mask)
            if residual <= tolerance:
                return phi, iters, residual
            tol *= 1e-2
        raise ConvergenceError(
            f"AMG/CG did not reach residual {tolerance:g} (got {residual:g})",
            residual=residual,
        )


@dataclass
class SolveReport:
    method: str
    entries: list = field(default_factory=list)  # (name, iterations, residual)

    def __str__(self):
        lines = [f"solver: {self.method}"]
        for name, iters, res in self.entries:
            lines.append(f"  electrode {name:>4s}: {iters:6d} iterations, residual {res:.3e}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# BasisFieldSet
# ---------------------------------------------------------------------------

_BLOCK_OFFSETS = np.arange(4) - 1


@dataclass
class BasisFieldSet:
    """Solved unit-voltage potentials for every electrode of a layout.

    data[m] is the grid of electrode names[m]; mask classifies nodes as
    vacuum / boundary / electrode index.  Immutable by convention after the
    solve; share freely across workers.
    """

    grid: GridSpec
    names: tuple
    data: np.ndarray          # (n_electrodes, nx, ny, nz)
    mask: np.ndarray          # int16, VACUUM / BOUNDARY / electrode index
    report: SolveReport | None = None

    def __post_init__(self):
        self._index = {n: i for i, n in enumerate(self.names)}
        self._metal = self.mask >= 0

    @property
    def hessian_step(self) -> float:
        return self.grid.spacing

    def phi(self, name: str) -> np.ndarray:
        return self.data[self._index[name]]

    def control_names(self) -> list:
        return [n for n in self.names if role_of(n) == "control"]

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo = np.asarray(self.grid.origin)
        hi = np.asarray(self.grid.max_corner)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def inside_metal(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        rel = (pts - np.asarray(self.grid.origin)) / self.grid.spacing
        idx = np.rint(rel).astype(np.int64)
        for a in range(3):
            idx[:, a] = np.clip(idx[:, a], 0, self.grid.shape[a] - 1)
        return self._metal[idx[:, 0], idx[:, 1], idx[:, 2]]

    # -- interpolation kernel ------------------------------------------------

    def _cells(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.contains(pts)
        if not inside.all():
            bad = pts[~inside][0]
            raise ValueError(f"point {bad.tolist()} outside the grid bounding box")
        rel = (pts - np.asarray(self.grid.origin)) / self.grid.spacing
        cell = np.floor(rel).astype(np.int64)
        for a in range(3):
            cell[:, a] = np.clip(cell[:, a], 1, self.grid.shape[a] - 3)
        frac = rel - cell
        return cell, frac

    @staticmethod
    def _trilinear_weights(frac):
        wx = np.stack([1.0 - frac[:, 0], frac[:, 0]], axis=1)
        wy = np.stack([1.0 - frac[:, 1], frac[:, 1]], axis=1)
        wz = np.stack([1.0 - frac[:, 2], frac[:, 2]], axis=1)
        return wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]

    def _gather(self, rows, cell):
        gx = cell[:, 0, None] + _BLOCK_OFFSETS
        gy = cell[:, 1, None] + _BLOCK_OFFSETS
        gz = cell[:, 2, None] + _BLOCK_OFFSETS
        blocks = self.data[np.asarray(rows)[:, None, None, None, None],
                           gx[None, :, :, None, None],
                           gy[None, :, None, :, None],
                           gz[None, :, None, None, :]]
        metal = self._metal[gx[:, :, None, None], gy[:, None, :, None], gz[:, None, None, :]]
        return blocks, metal

    def _node_gradients(self, blocks, metal):
        """Per-axis one-sided/central differences at the 8 cell corners.

        blocks: (m, k, 4, 4, 4); metal: (k, 4, 4, 4).  The difference switches
        to one-sided into vacuum when the opposite neighbour is a conductor
        node, keeping the surface kink out of the stencil.
        """
        h = self.grid.spacing
        out = np.empty(blocks.shape[:2] + (3, 2, 2, 2))
        sl = (slice(1, 3), slice(1, 3), slice(1, 3))
        for axis in range(3):
            up = [slice(1, 3)] * 3
            dn = [slice(1, 3)] * 3
            up[axis] = slice(2, 4)
            dn[axis] = slice(0, 2)
            up, dn = tuple(up), tuple(dn)
            b_up = blocks[(slice(None), slice(None)) + up]
            b_dn = blocks[(slice(None), slice(None)) + dn]
            b_ce = blocks[(slice(None), slice(None)) + sl]
            m_up = metal[(slice(None),) + up]
            m_dn = metal[(slice(None),) + dn]
            central = (b_up - b_dn) / (2.0 * h)
            back = (b_ce - b_dn) / h
            fwd = (b_up - b_ce) / h
            g = np.where(m_up & ~m_dn, back, np.where(m_dn & ~m_up, fwd, central))
            out[:, :, axis] = g
        return out

    def basis_values(self, rows, points):
        """phi of the selected electrode rows at points: (m, k)."""
        cell, frac = self._cells(points)
        blocks, _ = self._gather(rows, cell)
        w = self._trilinear_weights(frac)
        centre = blocks[:, :, 1:3, 1:3, 1:3]
        return np.einsum("mkijl,kijl->mk", centre, w)

    def basis_gradients(self, rows, points):
        """grad phi of the selected rows at points: (m, k, 3), units 1/m."""
        cell, frac = self._cells(points)
        blocks, metal = self._gather(rows, cell)
        w = self._trilinear_weights(frac)
        g = self._node_gradients(blocks, metal)
        return np.einsum("mkaijl,kijl->mka", g, w)

    # -- public field-source interface ----------------------------------------

    def _weights_for(self, va):
        rows, volts = [], []
        for name, v in va.items():
            if name not in self._index:
                raise KeyError(f"unknown electrode '{name}' in voltage assignment")
            role = role_of(name)
            if role == "rf":
                raise ValueError("rf electrode is driven by RfDrive, not a VoltageAssignment")
            if role == "ground" and v != 0.0:
                raise ValueError(f"ground electrode '{name}' is pinned to 0 V")
            if v != 0.0:
                rows.append(self._index[name])
                volts.append(float(v))
        return rows, np.asarray(volts)

    def control_potential(self, va, points) -> np.ndarray:
        """Sum_i V_i phi_i at points (volts)."""
        pts = np.atleast_2d(points)
        rows, volts = self._weights_for(va)
        if not rows:
            self._cells(pts)  # still validate bounds
            return np.zeros(len(pts))
        vals = self.basis_values(rows, pts)
        return volts @ vals

    def control_gradient(self, va, points) -> np.ndarray:
        """grad of Sum_i V_i phi_i at points (V/m), shape (k, 3)."""
        pts = np.atleast_2d(points)
        rows, volts = self._weights_for(va)
        if not rows:
            self._cells(pts)
            return np.zeros((len(pts), 3))
        g = self.basis_gradients(rows, pts)
        return np.einsum("m,mka->ka", volts, g)

    def rf_unit_potential(self, points) -> np.ndarray:
        return self.basis_values([self._index["rf"]], np.atleast_2d(points))[0]

    def rf_unit_gradient(self, points) -> np.ndarray:
        return self.basis_gradients([self._index["rf"]], np.atleast_2d(points))[0]

    def node_gradient_field(self, name: str) -> np.ndarray:
        """(3, nx, ny, nz) node gradients of one basis grid, one-sided at metal."""
        phi = self.phi(name)
        h = self.grid.spacing
        metal = self._metal
        out = np.zeros((3,) + phi.shape)
        for axis in range(3):
            up = np.empty_like(phi)
            dn = np.empty_like(phi)
            sl_up = [slice(None)] * 3
            sl_dn = [slice(None)] * 3
            sl_up[axis] = slice(1, None)
            sl_dn[axis] = slice(None, -1)
            up[tuple(sl_dn)] = phi[tuple(sl_up)]
            end = [slice(None)] * 3
            end[axis] = -1
            up[tuple(end)] = phi[tuple(end)]
            dn[tuple(sl_up)] = phi[tuple(sl_dn)]
            start = [slice(None)] * 3
            start[axis] = 0
            dn[tuple(start)] = phi[tuple(start)]

            m_up = np.zeros_like(metal)
            m_dn = np.zeros_like(metal)
            m_up[tuple(sl_dn)] = metal[tuple(sl_up)]
            m_up[tuple(end)] = True  # domain face: fall back to one-sided inward
            m_dn[tuple(sl_up)] = metal[tuple(sl_dn)]
            m_dn[tuple(start)] = True

            central = (up - dn) / (2.0 * h)
            back = (phi - dn) / h
            fwd = (up - phi) / h
            out[axis] = np.where(m_up & ~m_dn, back, np.where(m_dn & ~m_up, fwd, central))
        return out


def solve_basis(
    layout: TrapLayout,
    tolerance: float = 1e-6,
    max_iters: int = 100_000,
    method: str = "auto",
) -> BasisFieldSet:
    """Solve the unit-voltage Laplace problem for every electrode of ``layout``.

    method: 'sor' (reference red-black SOR), 'amg' (multigrid-preconditioned
    CG on the same stencil), or 'auto' (amg above ~200k vacuum nodes when
    pyamg is importable).  Both satisfy the residual contract on return.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if any(n < 3 for n in layout.grid.shape):
        raise SolverError(f"degenerate grid shape {layout.grid.shape}; need >= 3 nodes per axis")
    mask = rasterize(layout)
    n_vac = int((mask == VACUUM).sum())
    if n_vac == 0:
        raise SolverError("grid contains no vacuum nodes")
    if method == "auto":
        use_amg = n_vac > 200_000
        if use_amg:
            try:
                import pyamg  # noqa: F401
            except ImportError:
                use_amg = False
        method = "amg" if use_amg else "sor"

    names = tuple(e.name for e in layout.electrodes)
    data = np.zeros((len(names),) + tuple(layout.grid.shape))
    report = SolveReport(method=method)
    ctx = _AmgContext(mask) if method == "amg" else None
    for idx, name in enumerate(names):
        if method == "amg":
            phi, iters, residual = ctx.solve(idx, tolerance, max_iters)
        else:
            phi = np.zeros(tuple(layout.grid.shape))
            phi[mask == idx] = 1.0
            iters, residual = _solve_sor(phi, mask, tolerance, max_iters)
        data[idx] = phi
        report.entries.append((name, iters, residual))

    return BasisFieldSet(grid=layout.grid, names=names, data=data, mask=mask, report=report)


# ---------------------------------------------------------------------------
# Cache file ("ITBF"): little-endian header then per-electrode grids,
# node values in x-fastest order.
# ---------------------------------------------------------------------------

_MAGIC = b"ITBF"
_VERSION = 1
_HEADER = struct.Struct("<4sI3I3ddI")


def save_cache(fields: BasisFieldSet, path) -> None:
    nx, ny, nz = fields.grid.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(
            _MAGIC, _VERSION, nx, ny, nz,
            *fields.grid.origin, fields.grid.spacing, len(fields.names),
        ))
        for row, name in enumerate(fields.names):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(fields.data[row].transpose(2, 1, 0).tobytes())


def load_cache(path) -> BasisFieldSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(
            f"truncated file: expected at least {_HEADER.size} header bytes, got {len(blob)}"
        )
    magic, version, nx, ny, nz, ox, oy, oz, spacing, count = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise BadMagicError(f"bad magic {magic!r}; not a basis-field cache")
    if version != _VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, reader supports {_VERSION}")
    shape = (nx, ny, nz)
    n_nodes = nx * ny * nz
    if min(shape) <= 0 or count == 0:
        raise HeaderMismatchError(f"grid/electrode-count mismatch vs header: shape {shape}, count {count}")
    offset = _HEADER.size
    names, grids = [], []
    for k in range(count):
        if offset + 2 > len(blob):
            raise TruncatedFileError(
                f"truncated file: expected {offset + 2} bytes for electrode {k} name length, got {len(blob)}"
            )
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need = offset + name_len + 8 * n_nodes
        if need > len(blob):
            raise TruncatedFileError(
                f"truncated file: expected {need} bytes through electrode {k}, got {len(blob)}"
            )
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        flat = np.frombuffer(blob, dtype="<f8", count=n_nodes, offset=offset)
        offset += 8 * n_nodes
        grids.append(flat.reshape((nz, ny, nx)).transpose(2, 1, 0).copy())
        names.append(name)
    if offset != len(blob):
        raise HeaderMismatchError(
            f"grid/electrode-count mismatch vs header: {len(blob) - offset} unexpected trailing bytes"
        )
    if len(set(names)) != len(names):
        raise HeaderMismatchError("grid/electrode-count mismatch vs header: duplicate electrode names")

    data = np.stack(grids)
    mask = _reconstruct_mask(data, shape)
    grid = GridSpec(origin=(ox, oy, oz), shape=shape, spacing=spacing)
    return BasisFieldSet(grid=grid, names=tuple(names), data=data, mask=mask)


def _reconstruct_mask(data, shape):
    """Electrode nodes carry phi_self == 1 with every other basis exactly 0."""
    exact_one = data == 1.0
    total = data.sum(axis=0)
    single = exact_one.sum(axis=0) == 1
    mask = np.full(shape, VACUUM, dtype=np.int16)
    for row in range(data.shape[0]):
        sel = exact_one[row] & single & (total == 1.0)
        mask[sel] = row
    for a in range(3):
        face = [slice(None)] * 3
        for end in (0, -1):
            face[a] = end
            f = mask[tuple(face)]
            f[f == VACUUM] = BOUNDARY
    return mask


# ---------------------------------------------------------------------------
# Analytic field sources (oracles and overrides)
# ---------------------------------------------------------------------------

class QuadrupoleField:
    """Ideal linear-quadrupole rf basis phi_rf = coefficient*(x^2 - y^2)/r0^2.

    No control electrodes; used to validate the ponderomotive formula and the
    full-rf integrator against Mathieu theory.
    """

    def __init__(self, r0: float, coefficient: float = 1.0):
        self.r0 = r0
        self.coefficient = coefficient
        self.hessian_step = 1e-7

    def contains(self, points):
        return np.ones(len(np.atleast_2d(points)), dtype=bool)

    def inside_metal(self, points):
        return np.zeros(len(np.atleast_2d(points)), dtype=bool)

    def rf_unit_potential(self, points):
        p = np.atleast_2d(points)
        return self.coefficient * (p[:, 0] ** 2 - p[:, 1] ** 2) / self.r0 ** 2

    def rf_unit_gradient(self, points):
        p = np.atleast_2d(points)
        g = np.zeros_like(p)
        g[:, 0] = 2.0 * self.coefficient * p[:, 0] / self.r0 ** 2
        g[:, 1] = -2.0 * self.coefficient * p[:, 1] / self.r0 ** 2
        return g

    def control_potential(self, va, points):
        if any(v != 0.0 for v in va.values()):
            raise ValueError("QuadrupoleField has no control electrodes")
        return np.zeros(len(np.atleast_2d(points)))

    def control_gradient(self, va, points):
        if any(v != 0.0 for v in va.values()):
            raise ValueError("QuadrupoleField has no control electrodes")
        return np.zeros_like(np.atleast_2d(points), dtype=float)


class HarmonicWellField:
    """Static harmonic well: q*Phi_control = (m/2) Sum omega_a^2 (r_a - c_a)^2.

    The centre may be steered through pseudo-channels 'cx','cy','cz' whose
    "voltage" displaces the well by 1 um per volt along the matching axis,
    which lets ordinary schedules drive a moving well in tests and demos.
    There is no rf term, so pseudopotential-mode dynamics see the well alone.
    """

    CENTRE_SCALE = 1e-6  # m per volt on the cx/cy/cz channels

    def __init__(self, omegas, mass, charge, centre=(0.0, 0.0, 0.0)):
        self.omegas = np.asarray(omegas, dtype=float)
        self.mass = mass
        self.charge = charge
        self.centre = np.asarray(centre, dtype=float)
        self.hessian_step = 1e-7

    def contains(self, points):
        return np.ones(len(np.atleast_2d(points)), dtype=bool)

    def inside_metal(self, points):
        return np.zeros(len(np.atleast_2d(points)), dtype=bool)

    def _centre(self, va):
        shift = np.array([va.get("cx", 0.0), va.get("cy", 0.0), va.get("cz", 0.0)])
        return self.centre + self.CENTRE_SCALE * shift

    def rf_unit_potential(self, points):
        return np.zeros(len(np.atleast_2d(points)))

    def rf_unit_gradient(self, points):
        return np.zeros_like(np.atleast_2d(points), dtype=float)

    def control_potential(self, va, points):
        p = np.atleast_2d(points)
        d = p - self._centre(va)
        k = self.mass * self.omegas ** 2
        return 0.5 * (d * d * k).sum(axis=1) / self.charge

    def control_gradient(self, va, points):
        p = np.atleast_2d(points)
        d = p - self._centre(va)
        k = self.mass * self.omegas ** 2
        return d * k / self.charge
