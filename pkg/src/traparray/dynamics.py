"""Classical motion of one or two ions in the time-varying trap fields.

Velocity-Verlet integration in either mode:

  full_rf          m r'' = -q grad[ V0 cos(Omega t) phi_rf + Sum V_i(t) phi_i ]
  pseudopotential  m r'' = -grad[ Psi + q Sum V_i(t) phi_i ]

plus pairwise Coulomb coupling for two ions, a linear cooling drag -beta*v,
and an optional uniform stray field.  Pure function of its inputs: identical
inputs give bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import constants as C
from .analysis import IonSpecies, RfDrive, pseudopotential_coefficient
from .fields import BasisFieldSet
from .waveform import VoltageSchedule, sample_matrix


class DynamicsError(Exception):
    pass


class StepSizeError(DynamicsError):
    pass


class CoulombSingularityError(DynamicsError):
    pass


_MIN_ION_SPACING = 100e-9  # below this the classical point-charge model is meaningless


@dataclass(frozen=True)
class SimConfig:
    mode: str = "pseudopotential"        # or "full_rf"
    dt: float = 2e-9                     # s
    damping: float = 0.0                 # kg/s, -beta*v cooling drag
    stray_field: tuple = (0.0, 0.0, 0.0)  # V/m
    record_stride: int = 100
    omega_max: float | None = None       # stiffest expected secular mode, rad/s

    def __post_init__(self):
        if self.mode not in ("full_rf", "pseudopotential"):
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.dt <= 0 or self.record_stride < 1 or self.damping < 0:
            raise ValueError("need dt > 0, record_stride >= 1, damping >= 0")

    def validate_step(self, drive: RfDrive | None = None):
        """Enforce the >= 20 samples-per-period step invariants."""
        if self.mode == "full_rf":
            if drive is None:
                raise StepSizeError("full_rf mode needs the rf drive to validate dt")
            limit = (2.0 * math.pi / drive.angular_frequency) / 20.0
            if self.dt > limit * (1 + 1e-12):
                raise StepSizeError(
                    f"dt = {self.dt:.3e} s violates the full_rf step invariant "
                    f"dt <= (2 pi / Omega)/20 = {limit:.3e} s"
                )
        elif self.omega_max:
            limit = (2.0 * math.pi / self.omega_max) / 20.0
            if self.dt > limit * (1 + 1e-12):
                raise StepSizeError(
                    f"dt = {self.dt:.3e} s violates the pseudopotential step invariant "
                    f"dt <= (2 pi / omega_max)/20 = {limit:.3e} s"
                )


@dataclass
class IonState:
    positions: np.ndarray      # (n, 3) m
    velocities: np.ndarray     # (n, 3) m/s
    species: IonSpecies
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape or self.positions.shape[0] not in (1, 2):
            raise ValueError("IonState holds 1 or 2 ions with matching position/velocity shapes")

    @property
    def n_ions(self) -> int:
        return self.positions.shape[0]


@dataclass
class Trajectory:
    times: np.ndarray          # (s,)
    positions: np.ndarray      # (s, n, 3)
    velocities: np.ndarray     # (s, n, 3)
    kinetic_ev: np.ndarray     # (s,) total kinetic energy
    secular_kinetic_ev: np.ndarray  # (s,) kinetic energy smoothed over the averaging window
    final_state: IonState
    events: list = field(default_factory=list)   # (time, kind, detail)
    mode: str = "pseudopotential"
    average_window: float = 0.0

    @property
    def escaped(self) -> bool:
        return any(kind == "escape" for _, kind, _ in self.events)

    def mean_tail_position(self, window: float) -> np.ndarray:
        sel = self.times >= self.times[-1] - window
        return self.positions[sel].mean(axis=0)

    def mean_tail_kinetic_ev(self, window: float) -> float:
        sel = self.times >= self.times[-1] - window
        return float(self.kinetic_ev[sel].mean())


class _ForceModel:
    """Conservative force evaluator shared by single and batch integrators."""

    def __init__(self, fields, drive, species, schedule, config):
        self.fields = fields
        self.drive = drive
        self.species = species
        self.schedule = schedule
        self.config = config
        self.names = [n for n in schedule.channels.keys()]
        self._grid = isinstance(fields, BasisFieldSet)
        if self._grid:
            self.rows = [fields._index[n] for n in self.names]
            self.rf_row = fields._index["rf"]
            if config.mode == "pseudopotential":
                self._psi_fields = _pseudopotential_grid(fields, drive, species)
        elif config.mode == "pseudopotential":
            self._check_override_pseudo()

    def _check_override_pseudo(self):
        g = self.fields.rf_unit_gradient(np.zeros((1, 3)))
        self._override_has_rf = bool(np.any(g != 0.0)) or hasattr(
            self.fields, "pseudopotential_gradient"
        )

    def voltage_matrix(self, times):
        return sample_matrix(self.schedule, times, self.names)

    def conservative(self, pts, volts_row, t):
        """Force (k,3) in newtons from trap fields at absolute time t."""
        q = self.species.charge
        if self._grid:
            f = np.zeros_like(pts)
            if self.config.mode == "full_rf":
                rows = self.rows + [self.rf_row]
                weights = np.concatenate(
                    [volts_row, [self.drive.amplitude * math.cos(self.drive.angular_frequency * t)]]
                )
                g = self.fields.basis_gradients(rows, pts)
                f -= q * np.einsum("m,mka->ka", weights, g)
            else:
                if np.any(volts_row != 0.0):
                    nz = volts_row != 0.0
                    rows = [r for r, keep in zip(self.rows, nz) if keep]
                    g = self.fields.basis_gradients(rows, pts)
                    f -= q * np.einsum("m,mka->ka", volts_row[nz], g)
                gpsi = self._psi_fields.basis_gradients([0], pts)[0]
                f -= gpsi
            return f
        # analytic override sources
        va = dict(zip(self.names, volts_row))
        f = -q * self.fields.control_gradient(va, pts)
        if self.config.mode == "full_rf":
            f -= q * self.drive.amplitude * math.cos(self.drive.angular_frequency * t) \
                * self.fields.rf_unit_gradient(pts)
        elif getattr(self, "_override_has_rf", False):
            if hasattr(self.fields, "pseudopotential_gradient"):
                f -= self.fields.pseudopotential_gradient(self.drive, self.species, pts)
            else:
                f -= _fd_pseudo_gradient(self.fields, self.drive, self.species, pts)
        return f

    def lost(self, pts):
        """True per point if outside the grid box or inside an electrode."""
        inside = self.fields.contains(pts)
        out = ~inside
        if inside.any():
            metal = np.zeros(len(pts), dtype=bool)
            metal[inside] = self.fields.inside_metal(pts[inside])
            out |= metal
        return out


def _pseudopotential_grid(fields: BasisFieldSet, drive, species) -> BasisFieldSet:
    """Pseudopotential energy (joules) on the solver grid, wrapped so the
    standard interpolation kernel provides its gradient."""
    g = fields.node_gradient_field("rf")
    coef = pseudopotential_coefficient(drive, species)
    psi = coef * (g[0] ** 2 + g[1] ** 2 + g[2] ** 2)
    return BasisFieldSet(grid=fields.grid, names=("psi",), data=psi[None], mask=fields.mask)


def _fd_pseudo_gradient(fields, drive, species, pts, step=None):
    from .analysis import pseudopotential_at

    h = step or fields.hessian_step
    out = np.zeros_like(pts)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        up = np.atleast_1d(pseudopotential_at(fields, drive, species, pts + e))
        dn = np.atleast_1d(pseudopotential_at(fields, drive, species, pts - e))
        out[:, a] = (up - dn) / (2 * h) * C.ELEMENTARY_CHARGE  # eV/m -> J/m
    return out


def _coulomb_force(pts, q):
    """Pairwise Coulomb force for a 2-ion crystal; zero for a single ion."""
    if pts.shape[0] != 2:
        return np.zeros_like(pts)
    d = pts[0] - pts[1]
    r = float(np.linalg.norm(d))
    if r < _MIN_ION_SPACING:
        raise CoulombSingularityError(
            f"ion spacing {r * 1e9:.1f} nm fell below {_MIN_ION_SPACING * 1e9:.0f} nm"
        )
    f = C.COULOMB_CONSTANT * q * q * d / r**3
    return np.array([f, -f])


def integrate(
    state: IonState,
    fields,
    drive: RfDrive,
    schedule: VoltageSchedule,
    config: SimConfig,
    zone_markers: dict | None = None,
    capture_radius: float = 50e-6,
) -> Trajectory:
    """Velocity-Verlet integration until the schedule ends or the ion is lost.

    Escape (leaving the grid or entering an electrode) ends the run early and
    is recorded as an event; the truncated trajectory is still returned.
    """
    config.validate_step(drive)
    model = _ForceModel(fields, drive, state.species, schedule, config)
    m = state.species.mass
    q = state.species.charge
    beta = config.damping
    stray = np.asarray(config.stray_field, dtype=float) * q  # N

    t0 = state.time
    span = schedule.duration - t0
    if span <= 0:
        raise DynamicsError("state.time is already past the schedule duration")
    nsteps = int(math.ceil(span / config.dt))
    dt = span / nsteps

    pos = state.positions.copy()
    vel = state.velocities.copy()
    n_ions = pos.shape[0]

    rec_times, rec_pos, rec_vel, rec_ke = [], [], [], []
    events = []

    def _record(t):
        rec_times.append(t)
        rec_pos.append(pos.copy())
        rec_vel.append(vel.copy())
        rec_ke.append(0.5 * m * float((vel * vel).sum()) / C.ELEMENTARY_CHARGE)

    last_zone = None

    def _zone_check(t):
        nonlocal last_zone
        if not zone_markers:
            return
        best, best_d = None, capture_radius
        centre = pos.mean(axis=0)
        for label, p in zone_markers.items():
            d = float(np.linalg.norm(centre - np.asarray(p)))
            if d < best_d:
                best, best_d = label, d
        if best is not None and best != last_zone:
            events.append((t, "zone", best))
            last_zone = best

    chunk = 65536
    _record(t0)
    _zone_check(t0)

    def accel(f_cons, v):
        a = (f_cons + stray) / m
        if beta:
            a = a - (beta / m) * v
        return a

    f = model.conservative(pos, model.voltage_matrix([t0])[0], t0) + _coulomb_force(pos, q)
    step = 0
    stopped = False
    while step < nsteps and not stopped:
        n_block = min(chunk, nsteps - step)
        t_block = t0 + dt * (step + np.arange(n_block + 1))
        vmat = model.voltage_matrix(t_block)
        for i in range(n_block):
            t_next = t_block[i + 1]
            v_half = vel + 0.5 * dt * accel(f, vel)
            pos = pos + dt * v_half
            lost = model.lost(pos)
            if lost.any():
                events.append((t_next, "escape", pos[lost][0].copy()))
                vel = v_half
                _record(t_next)
                stopped = True
                break
            f = model.conservative(pos, vmat[i + 1], t_next) + _coulomb_force(pos, q)
            vel = v_half + 0.5 * dt * accel(f, v_half)
            step += 1
            if step % config.record_stride == 0 or step == nsteps:
                _record(t_next)
                _zone_check(t_next)

    times = np.asarray(rec_times)
    ke = np.asarray(rec_ke)
    window = _default_window(config, drive)
    sec = _rolling_mean(times, ke, window)
    final = IonState(positions=pos, velocities=vel, species=state.species, time=float(times[-1]))
    return Trajectory(
        times=times,
        positions=np.asarray(rec_pos),
        velocities=np.asarray(rec_vel),
        kinetic_ev=ke,
        secular_kinetic_ev=sec,
        final_state=final,
        events=events,
        mode=config.mode,
        average_window=window,
    )


@dataclass
class BatchResult:
    """Windowed summaries of many single-ion trajectories run in lockstep."""

    tail_positions: np.ndarray   # (k, 3) mean position over the trailing window
    tail_ke: np.ndarray          # (k,) mean kinetic energy, eV
    lead_ke: np.ndarray          # (k,) mean kinetic energy over the leading window
    escaped: np.ndarray          # (k,) bool
    escape_times: np.ndarray     # (k,) s (nan where not escaped)


def integrate_batch(positions, velocities, species, fields, drive, schedule,
                    config: SimConfig, window: float) -> BatchResult:
    """Integrate independent single-ion trials simultaneously.

    Identical stepping math to integrate() but without Coulomb coupling or
    trajectory recording; per-trial leading/trailing window averages are
    accumulated in place.  Escaped ions freeze where they left.
    """
    config.validate_step(drive)
    state_species = species
    model = _ForceModel(fields, drive, state_species, schedule, config)
    m = species.mass
    q = species.charge
    beta = config.damping
    stray = np.asarray(config.stray_field, dtype=float) * q

    pos = np.array(positions, dtype=float)
    vel = np.array(velocities, dtype=float)
    k = pos.shape[0]
    nsteps = int(math.ceil(schedule.duration / config.dt))
    dt = schedule.duration / nsteps
    t_tail = schedule.duration - window

    active = np.ones(k, dtype=bool)
    escaped = np.zeros(k, dtype=bool)
    escape_times = np.full(k, np.nan)
    lead_sum = np.zeros(k)
    lead_n = 0
    tail_ke_sum = np.zeros(k)
    tail_pos_sum = np.zeros((k, 3))
    tail_n = 0

    def ke_ev():
        return 0.5 * m * (vel * vel).sum(axis=1) / C.ELEMENTARY_CHARGE

    lead_sum += ke_ev()
    lead_n += 1

    def accel(f, v):
        a = (f + stray) / m
        if beta:
            a = a - (beta / m) * v
        return a

    def forces(t_abs, volts_row):
        f = np.zeros_like(pos)
        if active.any():
            f[active] = model.conservative(pos[active], volts_row, t_abs)
        return f

    f = forces(0.0, model.voltage_matrix([0.0])[0])
    chunk = 65536
    step = 0
    while step < nsteps:
        n_block = min(chunk, nsteps - step)
        t_block = dt * (step + np.arange(n_block + 1))
        vmat = model.voltage_matrix(t_block)
        for i in range(n_block):
            t_next = t_block[i + 1]
            a = accel(f, vel)
            a[~active] = 0.0
            v_half = vel + 0.5 * dt * a
            v_half[~active] = 0.0
            pos = pos + dt * v_half
            if active.any():
                lost_sub = model.lost(pos[active])
                if lost_sub.any():
                    lost = np.zeros(k, dtype=bool)
                    lost[np.nonzero(active)[0][lost_sub]] = True
                    active &= ~lost
                    escaped |= lost
                    escape_times[lost] = t_next
                    vel[lost] = 0.0
                    v_half[lost] = 0.0
            f = forces(t_next, vmat[i + 1])
            a = accel(f, v_half)
            a[~active] = 0.0
            vel = v_half + 0.5 * dt * a
            vel[~active] = 0.0
            step += 1
            t = t_next
            if t <= window:
                lead_sum += ke_ev()
                lead_n += 1
            if t >= t_tail:
                tail_ke_sum += ke_ev()
                tail_pos_sum += pos
                tail_n += 1
            if not active.any():
                step = nsteps
                break

    tail_n = max(tail_n, 1)
    return BatchResult(
        tail_positions=tail_pos_sum / tail_n,
        tail_ke=tail_ke_sum / tail_n,
        lead_ke=lead_sum / max(lead_n, 1),
        escaped=escaped,
        escape_times=escape_times,
    )


def _default_window(config: SimConfig, drive: RfDrive) -> float:
    """Ten periods of the fastest retained motion: rf in full_rf mode, the
    stiffest secular mode otherwise (when known)."""
    if config.mode == "full_rf":
        return 10.0 * 2.0 * math.pi / drive.angular_frequency
    if config.omega_max:
        return 10.0 * 2.0 * math.pi / config.omega_max
    return 0.0


def _rolling_mean(times, values, window):
    if window <= 0 or len(times) < 3:
        return values.copy()
    out = np.empty_like(values)
    j0 = 0
    csum = np.concatenate([[0.0], np.cumsum(values)])
    for i, t in enumerate(times):
        while times[j0] < t - window:
            j0 += 1
        out[i] = (csum[i + 1] - csum[j0]) / (i + 1 - j0)
    return out


def kinetic_energy_gain(traj: Trajectory, window: float) -> float:
    """Trailing-window minus leading-window mean kinetic energy (eV).

    The window should cover >= 10 periods of the fastest retained motion so
    micromotion (full_rf) or secular oscillation (pseudopotential mode)
    averages out.
    """
    span = traj.times[-1] - traj.times[0]
    if window <= 0 or 2 * window > span:
        raise DynamicsError(
            f"averaging window {window:.3e} s does not fit twice in the trajectory span {span:.3e} s"
        )
    lead = traj.times <= traj.times[0] + window
    tail = traj.times >= traj.times[-1] - window
    return float(traj.kinetic_ev[tail].mean() - traj.kinetic_ev[lead].mean())


def two_ion_equilibrium(fields, drive, species, va, seed_centre, max_steps=200_000):
    """Relax a two-ion crystal to equilibrium by critically damped dynamics.

    Returns the pair of positions sorted by the coordinate of largest spread.
    In a harmonic axial well of frequency omega the spacing satisfies
    d^3 = q^2 / (2 pi eps0 m omega^2).
    """
    from .analysis import secular_frequencies, find_minimum

    centre = find_minimum(fields, drive, species, va, seed_centre)
    modes = secular_frequencies(fields, drive, species, va, centre)
    weak_axis = int(np.argmin(modes.frequencies))
    w_min = float(modes.frequencies.min())
    w_max = float(modes.frequencies.max())
    guess = (species.charge**2 / (2 * math.pi * C.EPSILON_0 * species.mass * w_min**2)) ** (1 / 3)
    offset = 0.5 * guess * modes.axes[weak_axis]
    pos = np.array([centre + offset, centre - offset])
    vel = np.zeros_like(pos)
    m = species.mass
    q = species.charge
    beta = 2.0 * m * w_min  # critical damping for the soft mode
    dt = min(0.05 / w_max, 2.0 * math.pi / w_max / 20.0)

    def force(p):
        g = fields.control_gradient(va, p) * q
        f = -g - _fd_pseudo_gradient_or_zero(fields, drive, species, p)
        return f + _coulomb_force(p, q)

    f = force(pos)
    tol = m * w_min**2 * guess * 1e-6  # force scale at 1 ppm of the spacing
    for step in range(max_steps):
        a = f / m - (beta / m) * vel
        v_half = vel + 0.5 * dt * a
        pos = pos + dt * v_half
        f = force(pos)
        vel = v_half + 0.5 * dt * (f / m - (beta / m) * v_half)
        if step > 2000 and step % 200 == 0:
            if np.abs(f).max() < tol and np.abs(vel).max() * dt < guess * 1e-9:
                break
    else:
        raise DynamicsError(
            f"two-ion relaxation did not converge (residual force {np.abs(f).max():.3e} N)"
        )
    order = np.argsort(pos[:, weak_axis])
    return pos[order]


def _fd_pseudo_gradient_or_zero(fields, drive, species, pts):
    if isinstance(fields, BasisFieldSet):
        grid = _pseudopotential_grid(fields, drive, species)
        return grid.basis_gradients([0], pts)[0]
    g = fields.rf_unit_gradient(pts)
    if not np.any(g):
        return np.zeros_like(pts)
    return _fd_pseudo_gradient(fields, drive, species, pts)


def dominant_frequency(times, series, f_min=0.0, f_max=None) -> float:
    """Frequency (Hz) of the strongest spectral peak of a sampled series,
    refined by parabolic interpolation around the FFT maximum."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = len(x)
    if n < 16:
        raise ValueError("series too short for spectral estimation")
    dt = float(times[1] - times[0])
    win = np.hanning(n)
    spec = np.abs(np.fft.rfft(x * win))
    freqs = np.fft.rfftfreq(n, dt)
    sel = freqs >= f_min
    if f_max is not None:
        sel &= freqs <= f_max
    idx = np.nonzero(sel)[0]
    k = idx[np.argmax(spec[idx])]
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
        delta = float(np.clip(delta, -0.5, 0.5))
    else:
        delta = 0.0
    return float((k + delta) / (n * dt))
