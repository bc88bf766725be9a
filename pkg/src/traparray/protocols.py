"""Named shuttling protocols, outcome classification, and Monte Carlo statistics.

The templates here reproduce the key operations of the T-array experiment:
the two-phase corner turn (slow approach into the junction, fast kick into
the arm), linear shuttling as a moving well, wedge separation of a two-ion
crystal in zone b, and the composite two-ion swap ("three-point turn").

Voltage amplitudes are tuned against the builtin layout's solved basis; the
waypoint values called out in the experiment (200 V approach, -2 V pull,
+-10 V kick, wedge on electrodes 4 and 5, confinement on 0, 1, 8, 17) are
kept verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import constants as C
from .analysis import (
    IonSpecies,
    RfDrive,
    SecularModes,
    doppler_temperature,
    find_minimum,
    secular_frequencies,
)
from .dynamics import SimConfig, integrate_batch
from .geometry import TrapLayout, zone_position
from .waveform import ProtocolProgram, Step, compile_protocol, hold, ramp


class ProtocolError(Exception):
    pass


# ---------------------------------------------------------------------------
# Zone pocket assignments (volts).  A negative segment pulls the ion to the
# segment centre; stem zones use their four flanking electrodes, arm zones
# the above/below pair.  Amplitudes tuned for ~0.7 MHz axial at zone d and
# around 1 MHz at the other stem zones.
# ---------------------------------------------------------------------------

STEM_POCKET_VOLTS = -8.0
ARM_POCKET_VOLTS = -6.0
CORNER_POCKET_VOLTS = -4.0
D_POCKET_VOLTS = -4.0

_STEM_PAIRS = {"a": ("0", "1"), "b": ("4", "5"), "c": ("2", "3"), "d": ("6", "7")}
_ARM_PAIRS = {"i": ("8", "9"), "f": ("16", "17"),
              "j": ("10", "11"), "k": ("12", "13"),
              "g": ("18", "19"), "h": ("14", "15")}

STEM_ZONES = ("a", "b", "c", "d")
RIGHT_ARM_ZONES = ("i", "j", "k")
LEFT_ARM_ZONES = ("f", "g", "h")

# x-mirror of the layout: swaps left/right stem electrodes and the two arms
MIRROR_X = {"8": "17", "17": "8", "9": "16", "16": "9",
            "10": "18", "18": "10", "11": "19", "19": "11",
            "12": "14", "14": "12", "13": "15", "15": "13",
            "0": "1", "1": "0", "2": "3", "3": "2",
            "4": "5", "5": "4", "6": "7", "7": "6",
            "20": "21", "21": "20", "22": "23", "23": "22",
            "24": "25", "25": "24", "26": "27", "27": "26"}


def mirror_assignment(va: dict) -> dict:
    return {MIRROR_X.get(k, k): v for k, v in va.items()}


def zone_pocket(zone: str, volts: float | None = None) -> dict:
    """Voltage assignment whose static well sits at the given zone marker."""
    if zone in _STEM_PAIRS:
        v = STEM_POCKET_VOLTS if volts is None else volts
        l, r = _STEM_PAIRS[zone]
        out = {l: v, r: v, str(int(l) + 20): v, str(int(r) + 20): v}
        if zone == "d" and volts is None:
            out = {k: D_POCKET_VOLTS for k in out}
            out.update({"8": -1.0, "17": -1.0})
        return out
    if zone in _ARM_PAIRS:
        v = ARM_POCKET_VOLTS if volts is None else volts
        a, b = _ARM_PAIRS[zone]
        return {a: v, b: v}
    if zone == "e":
        v = CORNER_POCKET_VOLTS if volts is None else volts
        return {"8": v, "9": v, "16": v, "17": v}
    raise ProtocolError(f"no pocket assignment for zone '{zone}'")


def initial_assignment(program: ProtocolProgram) -> dict:
    for step in program.steps:
        if step.assignment is not None:
            return dict(step.assignment)
        break
    raise ProtocolError("program does not start with an assignment step")


# ---------------------------------------------------------------------------
# Corner turn (the two-phase junction protocol)
# ---------------------------------------------------------------------------

CORNER_APPROACH_VOLTS = 200.0
CORNER_PULL_VOLTS = -2.0
CORNER_KICK_VOLTS = 10.0


def _corner_d_to_i_steps(t_hold, t_approach, t_kick, t_settle):
    """The junction crossing, staged for a trap with strong control reach.

    The slow approach releases the d pocket while the far-side electrodes
    (9, 16 at -2 V) pull the well into the junction; the corner electrodes
    8, 17 rise gently to 0 V on the way.  The 200 V push and the +-10 V
    asymmetric kick then fire together in the single fast step: holding 200 V
    on the stem electrodes any longer would re-open the transverse saddle at
    the junction centre.
    """
    start = zone_pocket("d")
    glide = {"6": 0.0, "7": 0.0, "26": 0.0, "27": 0.0,
             "9": CORNER_PULL_VOLTS, "16": CORNER_PULL_VOLTS,
             "8": 0.0, "17": 0.0}
    push = dict(glide)
    push.update({"6": CORNER_APPROACH_VOLTS, "7": CORNER_APPROACH_VOLTS,
                 "26": CORNER_APPROACH_VOLTS, "27": CORNER_APPROACH_VOLTS,
                 "16": CORNER_KICK_VOLTS, "17": CORNER_KICK_VOLTS,
                 "8": -CORNER_KICK_VOLTS, "9": -CORNER_KICK_VOLTS})
    final = {"6": 0.0, "7": 0.0, "26": 0.0, "27": 0.0,
             "16": CORNER_KICK_VOLTS, "17": CORNER_KICK_VOLTS,
             "8": -CORNER_KICK_VOLTS, "9": -CORNER_KICK_VOLTS}
    return [
        hold(start, t_hold, label="confine at d"),
        ramp(glide, t_approach, label="glide into junction e"),
        ramp(push, t_kick, label="200 V push + kick into arm", fast=True),
        ramp(final, t_kick, label="release stem electrodes", fast=True),
        hold(final, t_settle, label="settle in i"),
    ]


def corner_turn_program(direction: str = "d_to_i", duration: float | None = None) -> ProtocolProgram:
    """The junction corner-turn templates.

    d_to_i is the canonical sequence: ~20 us adiabatic approach, ~1 us kick
    (with the 200 V stem push riding on it), then a settle hold.  i_to_d is
    the same sequence reflected about the diagonal axis through electrodes
    8 and 16 (swapping the stem with the right arm) and stretched to 20 ms.
    d_to_f / f_to_d are the x-mirrors.
    """
    if direction in ("d_to_i", "d_to_f"):
        total = 74e-6 if duration is None else duration
        scale = total / 74e-6
        steps = _corner_d_to_i_steps(2e-6 * scale, 20e-6 * scale, 1e-6 * scale, 50e-6 * scale)
    elif direction in ("i_to_d", "f_to_d"):
        total = 20e-3 if duration is None else duration
        steps = _corner_i_to_d_steps(0.05 * total, 0.70 * total, 0.025 * total, 0.20 * total)
    else:
        raise ProtocolError(f"unknown corner-turn direction '{direction}'")
    if direction in ("d_to_f", "f_to_d"):
        steps = [
            Step(kind=s.kind, duration=s.duration,
                 assignment=mirror_assignment(s.assignment), fast=s.fast, label=s.label)
            for s in steps
        ]
    frm, to = direction.split("_to_")
    prog = ProtocolProgram(name=f"corner-{frm}-to-{to}", steps=steps)
    prog.meta["direction"] = direction
    return prog


def _corner_i_to_d_steps(t_hold, t_approach, t_kick, t_settle):
    """Reverse corner turn, the diagonal reflection of the forward one:
    release the i pocket while the far-side electrodes pull the well across
    the junction, then fire the arm-side push together with a pull down the
    stem."""
    start = zone_pocket("i")
    glide = {"8": 0.0, "9": 0.0,
             "16": CORNER_PULL_VOLTS, "17": CORNER_PULL_VOLTS}
    push = dict(glide)
    push.update({"8": CORNER_APPROACH_VOLTS, "9": CORNER_APPROACH_VOLTS,
                 "16": CORNER_KICK_VOLTS, "17": CORNER_KICK_VOLTS,
                 "6": -CORNER_KICK_VOLTS, "7": -CORNER_KICK_VOLTS,
                 "26": -CORNER_KICK_VOLTS, "27": -CORNER_KICK_VOLTS})
    final = {"8": CORNER_KICK_VOLTS, "9": CORNER_KICK_VOLTS,
             "16": 0.0, "17": 0.0,
             "6": -CORNER_KICK_VOLTS, "7": -CORNER_KICK_VOLTS,
             "26": -CORNER_KICK_VOLTS, "27": -CORNER_KICK_VOLTS}
    return [
        hold(start, t_hold, label="confine at i"),
        ramp(glide, t_approach, label="glide back into junction e"),
        ramp(push, t_kick, label="arm push + kick down the stem", fast=True),
        ramp(final, t_kick, label="release arm electrodes", fast=True),
        hold(final, t_settle, label="settle in d"),
    ]


# ---------------------------------------------------------------------------
# Linear shuttling: a moving well along one straight section
# ---------------------------------------------------------------------------

def _linear_groups():
    return (STEM_ZONES, RIGHT_ARM_ZONES, LEFT_ARM_ZONES)


def _group_of(zone):
    for grp in _linear_groups():
        if zone in grp:
            return grp
    return None


def linear_shuttle_program(frm: str, to: str, duration: float) -> ProtocolProgram:
    """Moving-well waveform between two zones of the same linear section."""
    prog = ProtocolProgram(name=f"shuttle-{frm}-to-{to}", steps=[])
    prog.steps = linear_shuttle_steps(frm, to, duration)
    return prog


def linear_shuttle_steps(frm: str, to: str, duration: float) -> list:
    grp = _group_of(frm)
    if grp is None or _group_of(to) is None:
        raise ProtocolError(f"zones '{frm}' and '{to}' must be trapping zones off the junction")
    if frm == to:
        return [hold(zone_pocket(frm), duration, label=f"hold at {frm}")]
    if _group_of(to) is not grp:
        raise ProtocolError(
            f"zones '{frm}' and '{to}' are not collinear; route via a corner turn"
        )
    i0, i1 = grp.index(frm), grp.index(to)
    stepdir = 1 if i1 > i0 else -1
    path = [grp[i] for i in range(i0, i1 + stepdir, stepdir)]
    legs = len(path) - 1
    leg_t = duration / (legs + 0.5)
    steps = [hold(zone_pocket(frm), 0.5 * leg_t, label=f"hold at {frm}")]
    for a, b in zip(path, path[1:]):
        steps.append(ramp(_merged_pocket(a, b), 0.5 * leg_t, label=f"well between {a},{b}"))
        steps.append(ramp(_cleared(zone_pocket(b), zone_pocket(a)), 0.5 * leg_t,
                          label=f"well at {b}"))
    return steps


def _merged_pocket(a, b):
    out = {}
    for k, v in zone_pocket(a).items():
        out[k] = v
    for k, v in zone_pocket(b).items():
        out[k] = min(out.get(k, 0.0), v) if v < 0 else max(out.get(k, 0.0), v)
    return out


def _cleared(target, previous):
    """Target assignment that also zeroes channels only the previous one used."""
    out = dict(target)
    for k in previous:
        out.setdefault(k, 0.0)
    return out


# ---------------------------------------------------------------------------
# Separation / combination in zone b
# ---------------------------------------------------------------------------

SEPARATION_WEAK_VOLTS = -0.08        # weakens zone b toward ~20 kHz axial
SEPARATION_WEDGE_VOLTS = 4.0
SEPARATION_ENDCAP_VOLTS = -6.0

WEDGE_CHANNELS = ("4", "5")
SEPARATION_CONFINEMENT = ("0", "1", "8", "17")


def separation_waypoints(layout, zone: str, duration: float) -> list:
    if zone != "b":
        raise ProtocolError(f"separation is only templated for zone b, not '{zone}'")
    t1, t2, t3 = 0.30 * duration, 0.40 * duration, 0.30 * duration
    weak = {"4": SEPARATION_WEAK_VOLTS, "5": SEPARATION_WEAK_VOLTS,
            "24": SEPARATION_WEAK_VOLTS, "25": SEPARATION_WEAK_VOLTS,
            "0": SEPARATION_ENDCAP_VOLTS, "1": SEPARATION_ENDCAP_VOLTS,
            "8": SEPARATION_ENDCAP_VOLTS, "17": SEPARATION_ENDCAP_VOLTS}
    wedge = dict(weak)
    wedge.update({"4": SEPARATION_WEDGE_VOLTS, "5": SEPARATION_WEDGE_VOLTS})
    tight = dict(wedge)
    tight.update({k: 2.0 * SEPARATION_ENDCAP_VOLTS for k in SEPARATION_CONFINEMENT})
    return [
        ramp(weak, t1, label="weaken axial confinement at b"),
        ramp(wedge, t2, label="wedge"),
        ramp(tight, t3, label="re-tighten flanking wells"),
    ]


def combination_waypoints(layout, zone: str, duration: float) -> list:
    """Time-reversed separation: lower the wedge, restore the single b well."""
    if zone != "b":
        raise ProtocolError(f"combination is only templated for zone b, not '{zone}'")
    fwd = separation_waypoints(layout, zone, duration)
    targets = [dict(s.assignment) for s in fwd]
    rev = []
    labels = ["relax flanking wells", "lower wedge", "restore well at b"]
    rev.append(ramp(targets[1], fwd[2].duration, label=labels[0]))
    rev.append(ramp(targets[0], fwd[1].duration, label=labels[1]))
    final = _cleared(zone_pocket("b"), targets[0])
    rev.append(ramp(final, fwd[0].duration, label=labels[2]))
    return rev


def separation_program(zone: str = "b", duration: float = 10e-3) -> ProtocolProgram:
    steps = [hold(zone_pocket("b"), 0.02 * duration, label="two-ion crystal in b")]
    steps += separation_waypoints(None, zone, 0.98 * duration)
    prog = ProtocolProgram(name="separation-b", steps=steps)
    prog.meta["wedge"] = list(WEDGE_CHANNELS)
    prog.meta["confinement"] = list(SEPARATION_CONFINEMENT)
    return prog


def combination_program(zone: str = "b", duration: float = 10e-3) -> ProtocolProgram:
    steps = combination_waypoints(None, zone, 0.9 * duration)
    steps.append(hold(zone_pocket("b"), 0.1 * duration, label="recombined crystal in b"))
    return ProtocolProgram(name="combination-b", steps=steps)


# ---------------------------------------------------------------------------
# Moves (used by waveform.compile for ProtocolProgram move steps)
# ---------------------------------------------------------------------------

def move_waypoints(layout, frm: str, to: str, duration: float) -> list:
    """Waypoint steps for one move edge, routing through the junction when
    the zones are not collinear."""
    if _group_of(frm) and _group_of(frm) is _group_of(to) or frm == to:
        return linear_shuttle_steps(frm, to, duration)
    route = _route(frm, to)
    # split time between junction crossings (heavier) and linear legs
    weights = []
    for a, b in zip(route, route[1:]):
        weights.append(3.0 if "e" in (a, b) else 1.0)
    total_w = sum(weights)
    steps = []
    for (a, b), w in zip(zip(route, route[1:]), weights):
        leg_t = duration * w / total_w
        if "e" in (a, b):
            steps += _junction_leg_steps(a, b, leg_t)
        else:
            steps += linear_shuttle_steps(a, b, leg_t)[1:]  # drop the redundant hold
    return steps


def _route(frm, to):
    gateways = {"stem": "d", "right": "i", "left": "f"}
    names = {tuple(STEM_ZONES): "stem", tuple(RIGHT_ARM_ZONES): "right",
             tuple(LEFT_ARM_ZONES): "left"}

    def leg_to_gateway(zone):
        grp = _group_of(zone)
        if grp is None:
            raise ProtocolError(f"cannot route from/to zone '{zone}'")
        return names[tuple(grp)], gateways[names[tuple(grp)]]

    g_from, gw_from = leg_to_gateway(frm)
    g_to, gw_to = leg_to_gateway(to)
    route = [frm]
    if frm != gw_from:
        route.append(gw_from)
    route.append("e")
    if to != gw_to:
        route.append(gw_to)
    route.append(to)
    # collapse duplicates such as d,d
    out = [route[0]]
    for z in route[1:]:
        if z != out[-1]:
            out.append(z)
    return out


def _junction_leg_steps(a, b, duration):
    """Adiabatic moving-well leg into or out of the junction pocket."""
    pocket_a = zone_pocket(a)
    pocket_b = zone_pocket(b)
    mid = _merged_pocket(a, b)
    return [
        ramp(mid, 0.5 * duration, label=f"well between {a},{b}"),
        ramp(_cleared(pocket_b, dict(pocket_a, **mid)), 0.5 * duration, label=f"well at {b}"),
    ]


# ---------------------------------------------------------------------------
# Swap ("three-point turn")
# ---------------------------------------------------------------------------

def swap_program(step_duration: float = 10e-3) -> ProtocolProgram:
    """Exchange two ions crystallised in b: separate, park one in each arm,
    then re-merge in reversed order."""
    T = step_duration
    steps = [hold(zone_pocket("b"), 0.02 * T, label="two-ion crystal in b")]
    steps += separation_waypoints(None, "b", T)
    # upper ion (near the junction corner well) to j
    steps += _swap_leg_upper_to_j(T)
    # lower ion (parked near a) up the stem and into h
    steps += _swap_leg_lower_to_h(T)
    # first ion back to b
    steps += _swap_leg_j_to_b(T)
    # second ion back to b, merging with the first
    steps += _swap_leg_h_to_b(T)
    steps.append(hold(zone_pocket("b"), 0.5 * T, label="recombined in b"))
    prog = ProtocolProgram(name="swap-three-point-turn", steps=steps)
    prog.meta["visit_order"] = ["b", "j", "h", "b"]
    return prog


def _park(*zones):
    out = {}
    for z in zones:
        out.update(zone_pocket(z))
    return out


def _with_park(base, park):
    out = dict(base)
    out.update(park)
    return out


def _seq(targets, duration, label):
    leg = duration / len(targets)
    return [ramp(t, leg, label=f"{label} {i}") for i, t in enumerate(targets)]


def _swap_leg_upper_to_j(T):
    """The ion left near the junction corner after separation rides a chain
    of pockets e -> i -> j while the a-well keeps holding the lower ion."""
    park = zone_pocket("a")
    chain = [
        _with_park(_cleared(zone_pocket("e"), separation_end_state()), park),
        _with_park(_merged_pocket("e", "i"), park),
        _with_park(_cleared(zone_pocket("i"), zone_pocket("e")), park),
        _with_park(_merged_pocket("i", "j"), park),
        _with_park(_cleared(zone_pocket("j"), zone_pocket("i")), park),
    ]
    return _seq(chain, T, "upper ion to j:")


def _swap_leg_lower_to_h(T):
    park = zone_pocket("j")
    chain = []
    for a, b in (("a", "b"), ("b", "c"), ("c", "d"), ("d", "e"), ("e", "f"), ("f", "g"), ("g", "h")):
        chain.append(_with_park(_merged_pocket(a, b), park))
        chain.append(_with_park(_cleared(zone_pocket(b), zone_pocket(a)), park))
    return _seq(chain, 2.0 * T, "lower ion to h:")


def _swap_leg_j_to_b(T):
    park = zone_pocket("h")
    chain = []
    for a, b in (("j", "i"), ("i", "e"), ("e", "d"), ("d", "c"), ("c", "b")):
        chain.append(_with_park(_merged_pocket(a, b), park))
        chain.append(_with_park(_cleared(zone_pocket(b), zone_pocket(a)), park))
    return _seq(chain, 1.5 * T, "first ion to b:")


def _swap_leg_h_to_b(T):
    park = zone_pocket("b")
    chain = []
    for a, b in (("h", "g"), ("g", "f"), ("f", "e"), ("e", "d"), ("d", "c")):
        chain.append(_with_park(_merged_pocket(a, b), park))
        chain.append(_with_park(_cleared(zone_pocket(b), zone_pocket(a)), park))
    # final descent: hand the moving well off into the held b pocket
    chain.append(_with_park(_merged_pocket("c", "b"), park))
    chain.append(_with_park(_cleared(zone_pocket("b"), zone_pocket("c")), park))
    return _seq(chain, 1.5 * T, "second ion to b:")


def separation_end_state() -> dict:
    return dict(separation_waypoints(None, "b", 1.0)[-1].assignment)


# ---------------------------------------------------------------------------
# Outcome classification and Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class Outcome:
    kind: str                      # success | wrong_zone | escaped | unresolved
    final_zone: str | None = None
    energy_gain_ev: float = 0.0
    escape_time: float | None = None
    escape_position: tuple | None = None


@dataclass
class SuccessStats:
    trials: int
    successes: int
    rate: float
    wilson_low: float
    wilson_high: float
    seed: int
    outcomes: list = field(default_factory=list)


@dataclass(frozen=True)
class ThermalEnsemble:
    """Gaussian position/velocity spread of a Doppler-cooled ion in the
    harmonic modes of its starting well.  T = 0 collapses to the minimum."""

    temperature: float

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def doppler(cls, species: IonSpecies) -> "ThermalEnsemble":
        return cls(temperature=doppler_temperature(species))

    def sample(self, modes: SecularModes, species: IonSpecies, rng) -> tuple:
        if self.temperature == 0.0:
            return modes.minimum.copy(), np.zeros(3)
        sigma_v = math.sqrt(C.K_BOLTZMANN * self.temperature / species.mass)
        pos = modes.minimum.copy()
        vel = np.zeros(3)
        for k in range(3):
            sigma_x = sigma_v / modes.frequencies[k]
            pos = pos + modes.axes[k] * rng.normal(0.0, sigma_x)
            vel = vel + modes.axes[k] * rng.normal(0.0, sigma_v)
        return pos, vel


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple:
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def classify_outcome(traj, target: str, layout: TrapLayout,
                     capture_radius: float = 50e-6, energy_cap: float = 5.0) -> Outcome:
    """Success iff the tail-averaged position is captured at the target zone
    with bounded tail-averaged kinetic energy and no escape."""
    for t, kind, detail in traj.events:
        if kind == "escape":
            return Outcome(kind="escaped", escape_time=t,
                           escape_position=tuple(np.asarray(detail).tolist()))
    window = traj.average_window if traj.average_window > 0 else \
        0.1 * (traj.times[-1] - traj.times[0])
    tail_pos = traj.mean_tail_position(window)[0]
    tail_ke = traj.mean_tail_kinetic_ev(window)
    lead = traj.times <= traj.times[0] + window
    gain = float(traj.kinetic_ev[traj.times >= traj.times[-1] - window].mean()
                 - traj.kinetic_ev[lead].mean())
    zone = _nearest_zone(tail_pos, layout, capture_radius)
    if zone == target and tail_ke < energy_cap:
        return Outcome(kind="success", final_zone=zone, energy_gain_ev=gain)
    if zone is not None:
        return Outcome(kind="wrong_zone", final_zone=zone, energy_gain_ev=gain)
    return Outcome(kind="unresolved", energy_gain_ev=gain)


def _nearest_zone(point, layout, radius):
    best, best_d = None, radius
    for z in layout.zones:
        d = float(np.linalg.norm(point - zone_position(layout, z.label)))
        if d < best_d:
            best, best_d = z.label, d
    return best


def monte_carlo(program: ProtocolProgram, layout, fields, drive: RfDrive,
                species: IonSpecies, hw, config: SimConfig,
                ensemble: ThermalEnsemble, trials: int, seed: int,
                target: str | None = None,
                capture_radius: float = 50e-6, energy_cap: float = 5.0) -> SuccessStats:
    """Deterministic Monte Carlo over thermal initial conditions.

    Trial k draws its initial state from a counter-based Philox stream keyed
    by (seed, k), so results do not depend on execution order or batching.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    schedule = compile_protocol(program, layout, fields, hw)
    va0 = initial_assignment(program)
    start_zone = program.zone_visits()[0] if program.zone_visits() else "d"
    seed_point = zone_position(layout, start_zone)
    minimum = find_minimum(fields, drive, species, va0, seed_point)
    modes = secular_frequencies(fields, drive, species, va0, minimum)
    if target is None:
        visits = program.zone_visits()
        target = visits[-1] if visits else start_zone

    positions = np.empty((trials, 3))
    velocities = np.empty((trials, 3))
    for k in range(trials):
        rng = np.random.Generator(np.random.Philox(key=np.array([seed, k], dtype=np.uint64)))
        positions[k], velocities[k] = ensemble.sample(modes, species, rng)

    window = 10.0 * 2.0 * math.pi / modes.frequencies.min()
    window = min(window, 0.2 * schedule.duration)
    result = integrate_batch(positions, velocities, species, fields, drive,
                             schedule, config, window=window)

    markers = {z.label: zone_position(layout, z.label) for z in layout.zones}
    outcomes = []
    successes = 0
    for k in range(trials):
        if result.escaped[k]:
            outcomes.append(Outcome(
                kind="escaped", escape_time=float(result.escape_times[k]),
                escape_position=tuple(result.tail_positions[k].tolist()),
            ))
            continue
        gain = float(result.tail_ke[k] - result.lead_ke[k])
        zone = None
        best_d = capture_radius
        for label, p in markers.items():
            d = float(np.linalg.norm(result.tail_positions[k] - p))
            if d < best_d:
                zone, best_d = label, d
        if zone == target and result.tail_ke[k] < energy_cap:
            outcomes.append(Outcome(kind="success", final_zone=zone, energy_gain_ev=gain))
            successes += 1
        elif zone is not None:
            outcomes.append(Outcome(kind="wrong_zone", final_zone=zone, energy_gain_ev=gain))
        else:
            outcomes.append(Outcome(kind="unresolved", energy_gain_ev=gain))

    lo, hi = wilson_interval(successes, trials)
    return SuccessStats(trials=trials, successes=successes, rate=successes / trials,
                        wilson_low=lo, wilson_high=hi, seed=seed, outcomes=outcomes)
