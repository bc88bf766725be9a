"""Voltage schedules and their compilation from high-level protocol programs.

A schedule is piecewise-linear per control electrode: a sorted list of
(time, volts) breakpoints, constant before the first and after the last.
Compilation concatenates protocol steps into one continuous schedule and
refuses (never clamps) anything that violates the hardware model, except for
steps explicitly flagged fast, which are reported as waived.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import constants as C


class ScheduleError(Exception):
    pass


class CompileError(ScheduleError):
    pass


class ScheduleFormatError(ScheduleError):
    pass


@dataclass(frozen=True)
class HardwareModel:
    slew_limit: float = C.DEFAULT_SLEW_LIMIT          # V/s
    rc_time_constant: float = C.DEFAULT_RC_TAU        # s
    voltage_bounds: tuple = C.DEFAULT_VOLTAGE_BOUNDS  # (min, max) V
    stray_field: tuple = (0.0, 0.0, 0.0)              # V/m, uniform

    def __post_init__(self):
        if self.rc_time_constant < 0:
            raise ValueError("rc time constant must be >= 0")
        if self.voltage_bounds[0] >= self.voltage_bounds[1]:
            raise ValueError("voltage bounds must satisfy min < max")


@dataclass
class VoltageSchedule:
    duration: float                       # s
    channels: dict                        # name -> list[(time_s, volts)]
    waived_fast_segments: list = field(default_factory=list)  # (channel, t0, t1, rate)

    def __post_init__(self):
        for name, pts in self.channels.items():
            times = [t for t, _ in pts]
            if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
                raise ScheduleError(f"channel '{name}' breakpoint times are not strictly increasing")
            if times and (times[0] < 0 or times[-1] > self.duration + 1e-15):
                raise ScheduleError(f"channel '{name}' has breakpoints outside [0, duration]")

    def channel_names(self):
        return list(self.channels.keys())

    def scaled(self, factor: float) -> "VoltageSchedule":
        return VoltageSchedule(
            duration=self.duration,
            channels={n: [(t, v * factor) for t, v in pts] for n, pts in self.channels.items()},
            waived_fast_segments=list(self.waived_fast_segments),
        )


def voltages_at(schedule: VoltageSchedule, t: float) -> dict:
    """Per-channel voltages at time t (clamped outside [0, duration]).

    Channels absent from the schedule are at 0 V by convention, so the result
    only lists scheduled channels.
    """
    out = {}
    for name, pts in schedule.channels.items():
        if not pts:
            out[name] = 0.0
            continue
        if t <= pts[0][0]:
            out[name] = pts[0][1]
        elif t >= pts[-1][0]:
            out[name] = pts[-1][1]
        else:
            times = [p[0] for p in pts]
            i = np.searchsorted(times, t, side="right") - 1
            t0, v0 = pts[i]
            t1, v1 = pts[i + 1]
            out[name] = v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    return out


def sample_matrix(schedule: VoltageSchedule, times, names=None):
    """Voltages on a time grid as an array (len(times), len(names))."""
    names = schedule.channel_names() if names is None else list(names)
    out = np.zeros((len(times), len(names)))
    for j, name in enumerate(names):
        pts = schedule.channels.get(name, [])
        if not pts:
            continue
        ts = np.array([p[0] for p in pts])
        vs = np.array([p[1] for p in pts])
        out[:, j] = np.interp(times, ts, vs)
    return out


# ---------------------------------------------------------------------------
# Protocol programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    """One protocol step.

    kind: 'hold' | 'ramp' | 'move' | 'separate' | 'combine'
    hold/ramp carry an assignment; move carries (frm, to); separate/combine a
    zone.  ``fast`` waives the slew check for deliberately non-adiabatic steps.
    """

    kind: str
    duration: float
    assignment: dict | None = None
    frm: str | None = None
    to: str | None = None
    zone: str | None = None
    fast: bool = False
    label: str = ""

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"step duration must be > 0 (got {self.duration})")
        if self.kind not in ("hold", "ramp", "move", "separate", "combine"):
            raise ValueError(f"unknown step kind '{self.kind}'")


@dataclass
class ProtocolProgram:
    name: str
    steps: list
    meta: dict = field(default_factory=dict)

    def zone_visits(self):
        out = []
        for s in self.steps:
            for z in (s.frm, s.to, s.zone):
                if z and (not out or out[-1] != z):
                    out.append(z)
        return out


def hold(assignment, duration, label="", fast=False) -> Step:
    return Step(kind="hold", duration=duration, assignment=dict(assignment), label=label, fast=fast)


def ramp(assignment, duration, label="", fast=False) -> Step:
    return Step(kind="ramp", duration=duration, assignment=dict(assignment), label=label, fast=fast)


def move(frm, to, duration, label="") -> Step:
    return Step(kind="move", duration=duration, frm=frm, to=to, label=label or f"move {frm}->{to}")


def separate(zone, duration) -> Step:
    return Step(kind="separate", duration=duration, zone=zone, label=f"separate in {zone}")


def combine(zone, duration) -> Step:
    return Step(kind="combine", duration=duration, zone=zone, label=f"combine in {zone}")


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

def _expand(step: Step, layout) -> list:
    """Resolve template steps into hold/ramp primitives."""
    if step.kind in ("hold", "ramp"):
        return [step]
    from . import protocols

    if step.kind == "move":
        return protocols.move_waypoints(layout, step.frm, step.to, step.duration)
    if step.kind == "separate":
        return protocols.separation_waypoints(layout, step.zone, step.duration)
    if step.kind == "combine":
        return protocols.combination_waypoints(layout, step.zone, step.duration)
    raise CompileError(f"unknown step kind '{step.kind}'")


def compile_protocol(program: ProtocolProgram, layout, fields=None, hw: HardwareModel | None = None) -> VoltageSchedule:
    """Flatten a protocol program into one continuous voltage schedule.

    Voltages at step boundaries are continuous by construction; bound or slew
    violations raise CompileError rather than being clamped.  Slew violations
    inside steps flagged fast are collected on the returned schedule as
    waived segments instead.
    """
    hw = hw or HardwareModel()
    control = set(layout.control_names())

    flat = []
    for step in program.steps:
        flat.extend(_expand(step, layout))
    if not flat:
        raise CompileError("program has no steps")

    lo, hi = hw.voltage_bounds
    current: dict = {}
    points: dict = {}
    fast_spans = []
    t = 0.0

    def _emit(name, time_s, volts):
        pts = points.setdefault(name, [])
        if pts and abs(pts[-1][0] - time_s) < 1e-18:
            pts[-1] = (time_s, volts)
        else:
            pts.append((time_s, volts))

    for idx, step in enumerate(flat):
        target = dict(step.assignment)
        for name, v in target.items():
            if name not in control:
                raise CompileError(
                    f"step {idx} ('{step.label or step.kind}'): '{name}' is not a control electrode"
                )
            if not (lo <= v <= hi):
                raise CompileError(
                    f"step {idx} ('{step.label or step.kind}'): electrode {name} at {v} V "
                    f"violates bounds [{lo}, {hi}]"
                )
        t_end = t + step.duration
        if step.kind == "hold":
            for name, v in target.items():
                cur = current.get(name, 0.0)
                if t > 0 and abs(cur - v) > 1e-12:
                    raise CompileError(
                        f"step {idx}: hold would jump electrode {name} from {cur} to {v} V"
                    )
                if t == 0.0:
                    _emit(name, 0.0, v)
                current[name] = v
            # pin held values so later ramps of other channels keep them flat
            for name, v in current.items():
                _emit(name, t_end, v)
        else:  # ramp
            changed = [n for n, v in target.items() if abs(current.get(n, 0.0) - v) > 1e-15]
            if t == 0.0:
                for name, v in target.items():
                    _emit(name, 0.0, v)
                    current[name] = v
            else:
                for name in changed:
                    _emit(name, t, current.get(name, 0.0))
                for name, v in target.items():
                    _emit(name, t_end, v)
                    rate = abs(v - current.get(name, 0.0)) / step.duration
                    if rate > hw.slew_limit * (1 + 1e-12):
                        if step.fast:
                            fast_spans.append((name, t, t_end, rate))
                        else:
                            raise CompileError(
                                f"step {idx} ('{step.label or step.kind}'): electrode {name} slew "
                                f"{rate:.3g} V/s exceeds limit {hw.slew_limit:.3g} V/s"
                            )
                    current[name] = v
        t = t_end

    for name, v in current.items():
        _emit(name, t, v)

    sched = VoltageSchedule(duration=t, channels=points, waived_fast_segments=fast_spans)
    return sched


# ---------------------------------------------------------------------------
# Hardware-model transforms and checks
# ---------------------------------------------------------------------------

def apply_rc_filter(schedule: VoltageSchedule, tau: float, sample_dt: float) -> VoltageSchedule:
    """First-order low-pass (time constant tau) applied per channel.

    The schedule is sampled at sample_dt, exponentially smoothed, and
    re-emitted as breakpoints.  tau = 0 returns the schedule unchanged.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if sample_dt <= 0:
        raise ValueError("sample_dt must be > 0")
    if tau == 0.0:
        return VoltageSchedule(
            duration=schedule.duration,
            channels={n: list(p) for n, p in schedule.channels.items()},
            waived_fast_segments=list(schedule.waived_fast_segments),
        )
    n = int(np.ceil(schedule.duration / sample_dt)) + 1
    times = np.minimum(np.arange(n) * sample_dt, schedule.duration)
    alpha = 1.0 - np.exp(-sample_dt / tau)
    channels = {}
    for name, pts in schedule.channels.items():
        ts = np.array([p[0] for p in pts])
        vs = np.array([p[1] for p in pts])
        u = np.interp(times, ts, vs)
        y = np.empty_like(u)
        y[0] = u[0]
        for i in range(1, n):
            y[i] = y[i - 1] + alpha * (u[i] - y[i - 1])
        channels[name] = list(zip(times.tolist(), y.tolist()))
    return VoltageSchedule(duration=schedule.duration, channels=channels)


def check_slew(schedule: VoltageSchedule, limit: float) -> list:
    """Every piecewise segment with |dV/dt| strictly above ``limit``.

    Returns (channel, (t0, t1), rate) tuples; an empty list means compliant.
    """
    if limit <= 0:
        raise ValueError("slew limit must be > 0")
    violations = []
    for name, pts in schedule.channels.items():
        for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
            rate = abs(v1 - v0) / (t1 - t0)
            if rate > limit * (1 + 1e-12):
                violations.append((name, (t0, t1), rate))
    return violations


# ---------------------------------------------------------------------------
# Schedule files: JSON with duration_s and channels {name: [[t, v], ...]}
# ---------------------------------------------------------------------------

def serialize_schedule(schedule: VoltageSchedule) -> str:
    doc = {
        "duration_s": schedule.duration,
        "channels": {
            name: [[t, v] for t, v in pts] for name, pts in schedule.channels.items()
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_schedule(text: str) -> VoltageSchedule:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"{exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    if not isinstance(doc, dict) or "duration_s" not in doc or "channels" not in doc:
        raise ScheduleFormatError("schedule file needs duration_s and channels")
    channels = {
        str(name): [(float(t), float(v)) for t, v in pts]
        for name, pts in doc["channels"].items()
    }
    return VoltageSchedule(duration=float(doc["duration_s"]), channels=channels)
