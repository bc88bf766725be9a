"""Pseudopotential analysis: trap minima, secular modes, node paths, adiabaticity.

The ponderomotive pseudopotential of an ion with charge q and mass m in the rf
field V0*cos(Omega*t)*phi_rf(r) is

    Psi(r) = q^2 V0^2 |grad phi_rf(r)|^2 / (4 m Omega^2)

reported here in eV.  Static control potentials add q*Sum V_i phi_i; trapping
zones are the minima of the total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import constants as C


class AnalysisError(Exception):
    pass


class SaddlePointError(AnalysisError):
    def __init__(self, message, eigenvalues=None):
        if eigenvalues is not None:
            message = f"{message}; Hessian eigenvalues {np.asarray(eigenvalues).tolist()}"
        super().__init__(message)
        self.eigenvalues = eigenvalues


class DescentError(AnalysisError):
    pass


class ValleyLostError(AnalysisError):
    pass


@dataclass(frozen=True)
class IonSpecies:
    """Trapped-ion species; linewidth (rad/s) is optional and only feeds the
    Doppler-limit temperature."""

    name: str
    mass: float           # kg
    charge: float         # C
    linewidth: float | None = None

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be > 0")
        if self.charge == 0:
            raise ValueError("charge must be nonzero")

    @classmethod
    def cd114(cls) -> "IonSpecies":
        return cls(
            name="Cd114+",
            mass=C.CD114_MASS_AMU * C.ATOMIC_MASS,
            charge=C.ELEMENTARY_CHARGE,
            linewidth=C.CD114_LINEWIDTH,
        )


@dataclass(frozen=True)
class RfDrive:
    amplitude: float            # V
    angular_frequency: float    # rad/s

    def __post_init__(self):
        if self.amplitude < 0 or self.angular_frequency <= 0:
            raise ValueError("need amplitude >= 0 and angular frequency > 0")

    @classmethod
    def default(cls) -> "RfDrive":
        return cls(C.DEFAULT_RF_VOLTS, 2.0 * math.pi * C.DEFAULT_RF_FREQ_HZ)


@dataclass
class SecularModes:
    """Mode frequencies matched to the coordinate axis their principal axis
    is closest to, i.e. frequencies[0] belongs to the most-x-like mode."""

    frequencies: np.ndarray    # (3,) rad/s
    axes: np.ndarray           # (3,3), axes[a] is the unit vector of mode a
    minimum: np.ndarray        # (3,) m

    def freq_hz(self) -> np.ndarray:
        return self.frequencies / (2.0 * math.pi)


@dataclass
class HumpMetrics:
    height_ev: float
    peak_position: np.ndarray
    fwhm: float


@dataclass
class NodePathProfile:
    branch: str
    arclength: np.ndarray      # (n,) m, monotone
    positions: np.ndarray      # (n,3) m
    psi_ev: np.ndarray         # (n,)

    def rows(self):
        for s, p, v in zip(self.arclength, self.positions, self.psi_ev):
            yield s, p, v


def pseudopotential_coefficient(drive: RfDrive, species: IonSpecies) -> float:
    """C such that Psi = C |grad phi_rf|^2, in joules."""
    return (species.charge ** 2 * drive.amplitude ** 2) / (
        4.0 * species.mass * drive.angular_frequency ** 2
    )


def pseudopotential_at(fields, drive: RfDrive, species: IonSpecies, point) -> float | np.ndarray:
    """Ponderomotive pseudopotential in eV; exactly 0 where grad phi_rf = 0."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    g = fields.rf_unit_gradient(pts)
    coef = pseudopotential_coefficient(drive, species) / C.ELEMENTARY_CHARGE
    psi = coef * np.einsum("ka,ka->k", g, g)
    return psi if np.ndim(point) > 1 else float(psi[0])


def total_static_potential_at(fields, drive, species, va, point) -> float | np.ndarray:
    """Pseudopotential plus control potential energy, in eV."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    psi = np.atleast_1d(pseudopotential_at(fields, drive, species, pts))
    control = fields.control_potential(va, pts)
    total = psi + species.charge * control / C.ELEMENTARY_CHARGE
    return total if np.ndim(point) > 1 else float(total[0])


def _energy_gradient(fields, drive, species, va, point, step):
    """Central-difference gradient of the total static potential, eV/m."""
    point = np.asarray(point, dtype=float)
    out = np.zeros(3)
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        up = total_static_potential_at(fields, drive, species, va, point + e)
        dn = total_static_potential_at(fields, drive, species, va, point - e)
        out[a] = (up - dn) / (2.0 * step)
    return out


def energy_hessian(fields, drive, species, va, point, step=None) -> np.ndarray:
    """Symmetrized finite-difference Hessian of the total static potential.

    Units eV/m^2; step defaults to the field source's natural resolution
    (one grid spacing for solved fields).
    """
    h = fields.hessian_step if step is None else step
    p = np.asarray(point, dtype=float)
    u = lambda q: total_static_potential_at(fields, drive, species, va, q)
    H = np.zeros((3, 3))
    u0 = u(p)
    for a in range(3):
        ea = np.zeros(3)
        ea[a] = h
        H[a, a] = (u(p + ea) - 2.0 * u0 + u(p - ea)) / h**2
    for a in range(3):
        for b in range(a + 1, 3):
            ea = np.zeros(3)
            eb = np.zeros(3)
            ea[a] = h
            eb[b] = h
            H[a, b] = H[b, a] = (
                u(p + ea + eb) - u(p + ea - eb) - u(p - ea + eb) + u(p - ea - eb)
            ) / (4.0 * h**2)
    return 0.5 * (H + H.T)


def find_minimum(fields, drive, species, va, seed, grad_tol=1e-3, max_iters=200) -> np.ndarray:
    """Local minimum of the total static potential near ``seed``.

    Damped Newton descent on the finite-difference gradient/Hessian with
    backtracking; terminates when |grad| < grad_tol (eV/m) or the step falls
    below spacing/1e4.  The returned point is verified to be a genuine
    minimum (positive-definite Hessian).
    """
    h = fields.hessian_step
    p = np.asarray(seed, dtype=float).copy()
    if not fields.contains(p[None, :]).all():
        raise DescentError("seed lies outside the grid")
    u = lambda q: total_static_potential_at(fields, drive, species, va, q)
    step_tol = h * 1e-4
    fd = h / 4.0
    for _ in range(max_iters):
        g = _energy_gradient(fields, drive, species, va, p, fd)
        gnorm = float(np.linalg.norm(g))
        if gnorm < grad_tol:
            break
        H = energy_hessian(fields, drive, species, va, p, step=h)
        try:
            evals = np.linalg.eigvalsh(H)
            if evals.min() > 0:
                delta = -np.linalg.solve(H, g)
            else:
                delta = -g * (h / gnorm)
        except np.linalg.LinAlgError:
            delta = -g * (h / gnorm)
        # trust region: never jump more than a few cells at once
        dn = float(np.linalg.norm(delta))
        if dn > 4.0 * h:
            delta *= 4.0 * h / dn
            dn = 4.0 * h
        u0 = u(p)
        scale = 1.0
        while scale * dn > step_tol:
            cand = p + scale * delta
            if not fields.contains(cand[None, :]).all():
                scale *= 0.5
                continue
            if u(cand) <= u0:
                break
            scale *= 0.5
        else:
            break
        p = p + scale * delta
        if not fields.contains(p[None, :]).all():
            raise DescentError("descent exited the grid")
    else:
        g = _energy_gradient(fields, drive, species, va, p, fd)
        if np.linalg.norm(g) > 10 * grad_tol * (1 + abs(u(p))):
            raise DescentError(
                f"descent did not settle: |grad| = {np.linalg.norm(g):.3e} eV/m after {max_iters} iterations"
            )
    H = energy_hessian(fields, drive, species, va, p, step=h)
    evals = np.linalg.eigvalsh(H)
    if evals.min() <= 0:
        raise SaddlePointError("converged to a saddle or unstable point", eigenvalues=evals)
    return p


def secular_frequencies(fields, drive, species, va, minimum) -> SecularModes:
    """Mode frequencies and principal axes from the Hessian at a minimum."""
    H = energy_hessian(fields, drive, species, va, minimum)
    evals, evecs = np.linalg.eigh(H * C.ELEMENTARY_CHARGE)  # J/m^2
    if evals.min() <= 0:
        raise SaddlePointError("saddle/unstable point", eigenvalues=evals)
    omegas = np.sqrt(evals / species.mass)
    # match each mode to the coordinate axis its eigenvector overlaps most
    cost = -np.abs(evecs)  # rows: coordinate axis, cols: mode
    rows, cols = linear_sum_assignment(cost)
    freq = np.empty(3)
    axes = np.empty((3, 3))
    for axis, mode in zip(rows, cols):
        freq[axis] = omegas[mode]
        vec = evecs[:, mode]
        axes[axis] = vec if vec[axis] >= 0 else -vec
    return SecularModes(frequencies=freq, axes=axes, minimum=np.asarray(minimum, dtype=float))


# ---------------------------------------------------------------------------
# Node-path tracing and hump metrics
# ---------------------------------------------------------------------------

_BRANCHES = {
    "stem": ("a", np.array([0.0, 1.0, 0.0])),
    "left-arm": ("h", np.array([1.0, 0.0, 0.0])),
    "right-arm": ("k", np.array([-1.0, 0.0, 0.0])),
}


def _transverse_minimize(fields, drive, species, point, e1, e2, bound):
    """Minimize Psi in the plane spanned by e1,e2 through point.

    Newton steps are taken only along sufficiently stiff eigendirections of
    the in-plane Hessian; soft or negative directions get tiny damped moves.
    Near the junction the plane grazes the crossing valleys, so an
    unrestricted step would slide off the branch being traced.
    """
    h = fields.hessian_step
    p = np.asarray(point, dtype=float).copy()
    psi = lambda q: pseudopotential_at(fields, drive, species, q)
    evals = np.zeros(2)
    for _ in range(60):
        g = np.empty(2)
        Ht = np.empty((2, 2))
        u0 = psi(p)
        vecs = (e1, e2)
        for i, v in enumerate(vecs):
            up = psi(p + h * v)
            dn = psi(p - h * v)
            g[i] = (up - dn) / (2 * h)
            Ht[i, i] = (up - 2 * u0 + dn) / h**2
        upp = psi(p + h * e1 + h * e2)
        upm = psi(p + h * e1 - h * e2)
        ump = psi(p - h * e1 + h * e2)
        umm = psi(p - h * e1 - h * e2)
        Ht[0, 1] = Ht[1, 0] = (upp - upm - ump + umm) / (4 * h**2)
        evals, evecs = np.linalg.eigh(Ht)
        lam_ref = np.abs(evals).max()
        step = np.zeros(2)
        for lam, u in zip(evals, evecs.T):
            gu = float(g @ u)
            if lam > 1e-3 * lam_ref and lam > 0:
                step += -(gu / lam) * u
            elif lam_ref > 0:
                step += -(gu / lam_ref) * u
        sn = float(np.linalg.norm(step))
        if sn > bound:
            step *= bound / sn
            sn = bound
        cand = p + step[0] * e1 + step[1] * e2
        if not fields.contains(cand[None, :]).all():
            break
        p = cand
        if sn < h * 1e-4:
            break
    return p, evals


def find_rf_node(fields, drive, species, seed, max_iters=80) -> np.ndarray:
    """Locate a pseudopotential node (minimum of Psi) near ``seed`` by
    eigenvalue-filtered Newton descent on the FD Hessian of Psi."""
    h = fields.hessian_step
    p = np.asarray(seed, dtype=float).copy()
    psi = lambda q: pseudopotential_at(fields, drive, species, q)
    for _ in range(max_iters):
        g = np.empty(3)
        H = np.empty((3, 3))
        u0 = psi(p)
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            up, dn = psi(p + e), psi(p - e)
            g[a] = (up - dn) / (2 * h)
            H[a, a] = (up - 2 * u0 + dn) / h**2
        for a in range(3):
            for b in range(a + 1, 3):
                ea = np.zeros(3)
                eb = np.zeros(3)
                ea[a] = h
                eb[b] = h
                H[a, b] = H[b, a] = (
                    psi(p + ea + eb) - psi(p + ea - eb) - psi(p - ea + eb) + psi(p - ea - eb)
                ) / (4 * h**2)
        evals, evecs = np.linalg.eigh(H)
        lam_ref = np.abs(evals).max()
        step = np.zeros(3)
        for lam, u in zip(evals, evecs.T):
            gu = float(g @ u)
            if lam > 1e-3 * lam_ref and lam > 0:
                step += -(gu / lam) * u
            elif lam_ref > 0:
                step += -(gu / lam_ref) * u
        sn = float(np.linalg.norm(step))
        if sn > h:
            step *= h / sn
            sn = h
        cand = p + step
        if not fields.contains(cand[None, :]).all():
            break
        p = cand
        if sn < h * 1e-5:
            break
    return p


def node_path_profile(fields, drive, species, branch, layout) -> NodePathProfile:
    """Trace the transverse pseudopotential minimum from a branch's outer zone
    to the junction's point node, sampling every grid spacing."""
    if branch not in _BRANCHES:
        raise AnalysisError(f"unknown branch '{branch}' (expected stem/left-arm/right-arm)")
    start_zone, direction = _BRANCHES[branch]
    from .geometry import zone_position

    start = zone_position(layout, start_zone)
    end = find_rf_node(fields, drive, species, zone_position(layout, "e"))
    h = fields.grid.spacing
    axis = int(np.argmax(np.abs(direction)))
    span = (end - start)[axis]
    n = int(abs(span) / h)
    stations = start[axis] + np.sign(span) * h * np.arange(n + 1)
    if abs(stations[-1] - end[axis]) > h / 10.0:
        stations = np.append(stations, end[axis])

    # transverse plane basis
    basis = [np.eye(3)[a] for a in range(3) if a != axis]
    e1, e2 = basis

    # the valley legitimately turns into a ridge this close to the junction
    junction_allowance = 400e-6

    positions = []
    psis = []
    p = start.copy()
    for s in stations:
        p[axis] = s
        p, evals = _transverse_minimize(fields, drive, species, p, e1, e2, bound=1.0 * h)
        p[axis] = s  # the in-plane step cannot leave the station
        dist_to_junction = abs(s - end[axis])
        if evals.min() <= 0 and dist_to_junction > junction_allowance:
            raise ValleyLostError(
                f"transverse minimum lost at station {s * 1e6:.1f} um on branch '{branch}'"
            )
        positions.append(p.copy())
        psis.append(pseudopotential_at(fields, drive, species, p))
    positions = np.asarray(positions)
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    arclength = np.concatenate([[0.0], np.cumsum(steps)])
    return NodePathProfile(
        branch=branch,
        arclength=arclength,
        positions=positions,
        psi_ev=np.asarray(psis),
    )


def count_humps(profile: NodePathProfile, prominence_ratio=0.10) -> int:
    """Number of interior local maxima with prominence above the given
    fraction of the profile's peak value."""
    v = profile.psi_ev
    peak = v.max()
    if peak <= 0:
        return 0
    count = 0
    for i in range(1, len(v) - 1):
        if v[i] >= v[i - 1] and v[i] > v[i + 1]:
            left_min = v[:i].min()
            right_min = v[i:].min()
            prominence = v[i] - max(left_min, right_min)
            if prominence >= prominence_ratio * peak:
                count += 1
    return count


def hump_metrics(profile: NodePathProfile) -> HumpMetrics:
    """Height above the preceding valley floor and FWHM along arclength."""
    v = profile.psi_ev
    if len(v) < 3:
        raise AnalysisError("profile too short")
    i_peak = int(np.argmax(v))
    if i_peak == 0 or i_peak == len(v) - 1:
        raise AnalysisError("no hump found (profile is monotone)")
    preceding_min = float(v[:i_peak].min())
    height = float(v[i_peak]) - preceding_min
    if height <= 0:
        raise AnalysisError("no hump found (profile is monotone)")
    half = preceding_min + height / 2.0

    def _cross(i0, i1, step):
        a, b = i0, i0 + step
        while 0 <= b < len(v):
            if (v[a] - half) * (v[b] - half) <= 0:
                t = (half - v[a]) / (v[b] - v[a])
                return profile.arclength[a] + t * (profile.arclength[b] - profile.arclength[a])
            a, b = b, b + step
        return None

    s_left = _cross(i_peak, 0, -1)
    s_right = _cross(i_peak, len(v) - 1, +1)
    if s_left is None or s_right is None:
        raise AnalysisError("could not bracket the hump at half height")
    return HumpMetrics(
        height_ev=height,
        peak_position=profile.positions[i_peak],
        fwhm=float(abs(s_right - s_left)),
    )


# ---------------------------------------------------------------------------
# Adiabaticity and Doppler limit
# ---------------------------------------------------------------------------

def adiabaticity_margin(fields, drive, species, schedule, seed, samples: int):
    """Sample the weakest secular mode along a schedule and the adiabaticity
    ratio |d omega/dt| / omega^2 by centred differences over the samples.

    Returns a list of (time_s, omega_rad_s, margin) tuples.
    """
    from .waveform import voltages_at

    if samples < 3:
        raise ValueError("need at least 3 samples")
    times = np.linspace(0.0, schedule.duration, samples)
    omegas = np.empty(samples)
    p = np.asarray(seed, dtype=float)
    for i, t in enumerate(times):
        va = voltages_at(schedule, t)
        try:
            p = find_minimum(fields, drive, species, va, p)
        except AnalysisError as exc:
            raise AnalysisError(f"minimum lost at t = {t:.3e} s: {exc}") from exc
        modes = secular_frequencies(fields, drive, species, va, p)
        omegas[i] = modes.frequencies.min()
    dt = times[1] - times[0]
    domega = np.gradient(omegas, dt)
    margins = np.abs(domega) / omegas**2
    return list(zip(times.tolist(), omegas.tolist(), margins.tolist()))


def doppler_temperature(species: IonSpecies) -> float:
    """Doppler cooling limit hbar*gamma/(2 kB) in kelvin."""
    if not species.linewidth:
        raise AnalysisError(f"species '{species.name}' has no linewidth set")
    return C.HBAR * species.linewidth / (2.0 * C.K_BOLTZMANN)
