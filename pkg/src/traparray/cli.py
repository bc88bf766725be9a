"""Command-line surface: solve fields, analyze potentials, compile protocols,
simulate trajectories, and run Monte Carlo batches.

Every command writes a run manifest (JSON with resolved parameters and
SHA-256 digests of all file inputs) next to its outputs, so a run can be
reproduced from the manifest alone.

Exit codes: 0 ok, 1 parse error, 2 numeric/semantic error, 3 I/O error,
64 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys

import numpy as np

from . import __version__
from . import analysis, dynamics, fields, geometry, protocols, waveform

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_path, command, params, inputs, seed=None):
    manifest = {
        "tool": "traparray",
        "version": __version__,
        "command": command,
        "parameters": params,
        "input_digests": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
    }
    path = str(out_path) + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _load_layout(args):
    if getattr(args, "builtin_t", False) or not getattr(args, "layout", None):
        return geometry.builtin_t_layout(), []
    with open(args.layout) as fh:
        text = fh.read()
    return geometry.parse_layout(text), [args.layout]


def _load_fields(args):
    return fields.load_cache(args.fields), [args.fields]


def _species(args):
    if getattr(args, "mass_amu", None):
        from . import constants as C

        return analysis.IonSpecies(
            name=f"{args.mass_amu}amu",
            mass=args.mass_amu * C.ATOMIC_MASS,
            charge=getattr(args, "charge_e", 1.0) * C.ELEMENTARY_CHARGE,
            linewidth=2 * math.pi * args.linewidth_hz if getattr(args, "linewidth_hz", None) else None,
        )
    name = getattr(args, "species", "Cd114+") or "Cd114+"
    if name not in ("Cd114+", "cd114", "Cd114"):
        raise UsageError(f"unknown species '{name}'; use --mass-amu for custom ions")
    return analysis.IonSpecies.cd114()


def _drive(args):
    return analysis.RfDrive(args.rf_volts, 2 * math.pi * args.rf_freq_hz)


_TEMPLATES = {
    "corner-d-to-i": lambda: protocols.corner_turn_program("d_to_i"),
    "corner-i-to-d": lambda: protocols.corner_turn_program("i_to_d"),
    "corner-d-to-f": lambda: protocols.corner_turn_program("d_to_f"),
    "corner-f-to-d": lambda: protocols.corner_turn_program("f_to_d"),
    "separation-b": lambda: protocols.separation_program(),
    "combination-b": lambda: protocols.combination_program(),
    "swap": lambda: protocols.swap_program(),
}


def _template(name):
    if name in _TEMPLATES:
        return _TEMPLATES[name]()
    if name.startswith("shuttle-"):
        parts = name.split("-")
        if len(parts) == 4 and parts[2] == "to":
            return protocols.linear_shuttle_program(parts[1], parts[3], 200e-6)
    raise UsageError(
        f"unknown template '{name}'; known: {', '.join(sorted(_TEMPLATES))}, shuttle-X-to-Y"
    )


_ASSIGNMENT_TEMPLATES = {
    "zone-d-initial": lambda: protocols.zone_pocket("d"),
    "zone-i-final": lambda: {"16": 10.0, "17": 10.0, "8": -10.0, "9": -10.0},
}


def _assignment(args, inputs):
    if getattr(args, "va_template", None):
        name = args.va_template
        if name in _ASSIGNMENT_TEMPLATES:
            return _ASSIGNMENT_TEMPLATES[name]()
        if name.startswith("pocket-"):
            return protocols.zone_pocket(name.split("-", 1)[1])
        raise UsageError(f"unknown assignment template '{name}'")
    if getattr(args, "assignment", None):
        with open(args.assignment) as fh:
            inputs.append(args.assignment)
            return {str(k): float(v) for k, v in json.load(fh).items()}
    raise UsageError("need --assignment FILE or --va-template NAME")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_solve(args):
    if args.tolerance <= 0:
        raise UsageError("--tolerance must be > 0")
    if args.max_iters < 1:
        raise UsageError("--max-iters must be >= 1")
    layout, inputs = _load_layout(args)
    bfs = fields.solve_basis(layout, tolerance=args.tolerance, max_iters=args.max_iters,
                             method=args.method)
    fields.save_cache(bfs, args.out)
    print(bfs.report)
    write_manifest(args.out, "solve",
                   {"tolerance": args.tolerance, "max_iters": args.max_iters,
                    "method": args.method, "builtin_t": bool(getattr(args, "builtin_t", False))},
                   inputs)
    return EXIT_OK


def cmd_analyze(args):
    bfs, inputs = _load_fields(args)
    layout, lay_inputs = _load_layout(args)
    inputs += lay_inputs
    species = _species(args)
    drive = _drive(args)

    if args.what == "pseudo-profile":
        prof = analysis.node_path_profile(bfs, drive, species, args.branch, layout)
        rows = [
            (s, p[0] * 1e6, p[1] * 1e6, p[2] * 1e6, v)
            for s, p, v in prof.rows()
        ]
        _write_csv(args.out, ["arclength_m", "x_um", "y_um", "z_um", "psi_ev"], rows)
        write_manifest(args.out, "analyze pseudo-profile",
                       {"branch": args.branch, "rf_volts": args.rf_volts,
                        "rf_freq_hz": args.rf_freq_hz}, inputs)
        print(f"wrote {len(rows)} samples to {args.out}")
        return EXIT_OK

    if args.what == "humps":
        print("branch      height_eV   FWHM_um   peak_x_um  peak_y_um")
        for branch in ("stem", "left-arm", "right-arm"):
            prof = analysis.node_path_profile(bfs, drive, species, branch, layout)
            hm = analysis.hump_metrics(prof)
            print(f"{branch:<11s} {hm.height_ev:9.4f} {hm.fwhm * 1e6:9.1f} "
                  f"{hm.peak_position[0] * 1e6:10.1f} {hm.peak_position[1] * 1e6:10.1f}")
        return EXIT_OK

    if args.what == "frequencies":
        va = _assignment(args, inputs)
        seed = geometry.zone_position(layout, args.zone)
        minimum = analysis.find_minimum(bfs, drive, species, va, seed)
        modes = analysis.secular_frequencies(bfs, drive, species, va, minimum)
        f = modes.freq_hz()
        print(f"minimum at ({minimum[0] * 1e6:.2f}, {minimum[1] * 1e6:.2f}, "
              f"{minimum[2] * 1e6:.2f}) um")
        for axis, freq in zip("xyz", f):
            print(f"omega_{axis}/2pi = {freq / 1e6:.4f} MHz")
        return EXIT_OK

    if args.what == "adiabaticity":
        with open(args.schedule) as fh:
            schedule = waveform.parse_schedule(fh.read())
        inputs.append(args.schedule)
        seed = geometry.zone_position(layout, args.zone)
        samples = analysis.adiabaticity_margin(bfs, drive, species, schedule, seed, args.samples)
        rows = [(t, w, m) for t, w, m in samples]
        _write_csv(args.out, ["time_s", "omega_rad_s", "margin"], rows)
        worst = max(m for _, _, m in samples)
        print(f"max |domega/dt|/omega^2 = {worst:.4g} over {args.samples} samples -> {args.out}")
        write_manifest(args.out, "analyze adiabaticity",
                       {"zone": args.zone, "samples": args.samples}, inputs)
        return EXIT_OK

    raise UsageError(f"unknown analyze subcommand '{args.what}'")


def cmd_compile(args):
    if args.template:
        program = _template(args.template)
        inputs = []
    else:
        with open(args.protocol) as fh:
            program = _parse_protocol(fh.read())
        inputs = [args.protocol]
    layout, lay_inputs = _load_layout(args)
    inputs += lay_inputs
    hw = waveform.HardwareModel()
    schedule = waveform.compile_protocol(program, layout, hw=hw)
    if args.filter_tau > 0:
        schedule = waveform.apply_rc_filter(schedule, args.filter_tau, args.filter_tau / 50.0)
    with open(args.out, "w") as fh:
        fh.write(waveform.serialize_schedule(schedule))
    print(f"compiled '{program.name}': {schedule.duration * 1e6:.2f} us, "
          f"{len(schedule.channels)} channels -> {args.out}")
    for name, t0, t1, rate in schedule.waived_fast_segments:
        print(f"  fast-step waived: electrode {name} at {rate:.3g} V/s over "
              f"[{t0 * 1e6:.2f}, {t1 * 1e6:.2f}] us")
    if args.check_slew:
        violations = waveform.check_slew(schedule, waveform.HardwareModel().slew_limit)
        waived = {(n, t0, t1) for n, t0, t1, _ in schedule.waived_fast_segments}
        hard = [v for v in violations if (v[0], v[1][0], v[1][1]) not in waived]
        print(f"slew report: {len(violations)} segment(s) above limit, "
              f"{len(violations) - len(hard)} waived")
    write_manifest(args.out, "compile",
                   {"template": args.template, "filter_tau": args.filter_tau}, inputs)
    return EXIT_OK


def _parse_protocol(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise waveform.CompileError(f"{exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    if not isinstance(doc, dict) or "steps" not in doc:
        raise waveform.CompileError("protocol file needs a steps list")
    steps = []
    for entry in doc["steps"]:
        kind = entry.get("kind")
        dur = float(entry.get("duration_s", 0.0))
        if kind in ("hold", "ramp"):
            va = {str(k): float(v) for k, v in entry.get("assignment", {}).items()}
            steps.append(waveform.Step(kind=kind, duration=dur, assignment=va,
                                       fast=bool(entry.get("fast", False)),
                                       label=entry.get("label", "")))
        elif kind == "move":
            steps.append(waveform.move(entry["from"], entry["to"], dur))
        elif kind in ("separate", "combine"):
            steps.append(waveform.Step(kind=kind, duration=dur, zone=entry["zone"]))
        else:
            raise waveform.CompileError(f"unknown step kind '{kind}'")
    return waveform.ProtocolProgram(name=str(doc.get("name", "protocol")), steps=steps)


def cmd_simulate(args):
    bfs, inputs = _load_fields(args)
    layout, lay_inputs = _load_layout(args)
    inputs += lay_inputs
    with open(args.schedule) as fh:
        schedule = waveform.parse_schedule(fh.read())
    inputs.append(args.schedule)
    species = _species(args)
    drive = _drive(args)
    mode = {"full-rf": "full_rf", "pseudo": "pseudopotential"}[args.mode]
    va0 = waveform.voltages_at(schedule, 0.0)
    seed_pos = geometry.zone_position(layout, args.start_zone)
    minimum = analysis.find_minimum(bfs, drive, species, va0, seed_pos)
    modes = analysis.secular_frequencies(bfs, drive, species, va0, minimum)
    omega_max = float(modes.frequencies.max())
    config = dynamics.SimConfig(mode=mode, dt=args.dt_s, damping=args.damping_kg_s,
                                record_stride=args.record_stride, omega_max=omega_max)
    config.validate_step(drive)

    rng = np.random.Generator(np.random.Philox(key=np.array([args.seed, 0], dtype=np.uint64)))
    ensemble = protocols.ThermalEnsemble(args.temp_k)
    positions, velocities = [], []
    for _ in range(args.ions):
        p, v = ensemble.sample(modes, species, rng)
        positions.append(p)
        velocities.append(v)
    if args.ions == 2:
        # split the pair along the weakest mode so they do not start on top of each other
        weak = int(np.argmin(modes.frequencies))
        d0 = (species.charge ** 2 / (2 * math.pi * 8.8541878128e-12 * species.mass
                                     * modes.frequencies.min() ** 2)) ** (1 / 3)
        positions[0] = positions[0] + 0.5 * d0 * modes.axes[weak]
        positions[1] = positions[1] - 0.5 * d0 * modes.axes[weak]
    state = dynamics.IonState(positions=np.array(positions), velocities=np.array(velocities),
                              species=species)
    markers = {z.label: geometry.zone_position(layout, z.label) for z in layout.zones}
    traj = dynamics.integrate(state, bfs, drive, schedule, config, zone_markers=markers)

    rows = []
    n = state.n_ions
    for idx in range(len(traj.times)):
        row = [traj.times[idx]]
        for k in range(n):
            row += [traj.positions[idx, k, 0] * 1e6, traj.positions[idx, k, 1] * 1e6,
                    traj.positions[idx, k, 2] * 1e6,
                    traj.velocities[idx, k, 0], traj.velocities[idx, k, 1],
                    traj.velocities[idx, k, 2]]
        row.append(traj.kinetic_ev[idx])
        rows.append(tuple(row))
    header = ["time_s"]
    for k in range(n):
        header += [f"x{k}_um", f"y{k}_um", f"z{k}_um", f"vx{k}", f"vy{k}", f"vz{k}"]
    header.append("KE_eV")
    _write_csv(args.out, header, rows)
    with open(args.out, "a") as fh:
        for t, kind, detail in traj.events:
            fh.write(f"# event,{t},{kind},{detail}\n")

    outcome = protocols.classify_outcome(traj, args.target_zone, layout)
    print(f"outcome: {outcome.kind}"
          + (f" (zone {outcome.final_zone})" if outcome.final_zone else "")
          + f", energy gain {outcome.energy_gain_ev:.4f} eV")
    write_manifest(args.out, "simulate",
                   {"ions": args.ions, "mode": args.mode, "temp_k": args.temp_k,
                    "dt_s": args.dt_s, "target_zone": args.target_zone,
                    "start_zone": args.start_zone, "damping_kg_s": args.damping_kg_s},
                   inputs, seed=args.seed)
    return EXIT_OK


def cmd_montecarlo(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    bfs, inputs = _load_fields(args)
    layout, lay_inputs = _load_layout(args)
    inputs += lay_inputs
    species = _species(args)
    drive = _drive(args)
    program = _template(args.template)
    visits = program.zone_visits()
    target = args.target_zone or (visits[-1] if visits else "d")
    config = dynamics.SimConfig(mode="pseudopotential", dt=args.dt_s,
                                damping=args.damping_kg_s)
    ensemble = protocols.ThermalEnsemble(args.temp_k)
    stats = protocols.monte_carlo(program, layout, bfs, drive, species,
                                  waveform.HardwareModel(), config, ensemble,
                                  args.trials, args.seed, target=target)
    rows = [
        (k, o.kind, o.final_zone or "", o.energy_gain_ev)
        for k, o in enumerate(stats.outcomes)
    ]
    _write_csv(args.out, ["trial", "outcome", "final_zone", "energy_gain_ev"], rows)
    with open(args.out, "a") as fh:
        fh.write(f"# summary,trials={stats.trials},successes={stats.successes},"
                 f"rate={stats.rate!r},wilson_low={stats.wilson_low!r},"
                 f"wilson_high={stats.wilson_high!r},seed={stats.seed}\n")
    print(f"{stats.successes}/{stats.trials} successes "
          f"(rate {stats.rate:.4f}, 95% CI [{stats.wilson_low:.4f}, {stats.wilson_high:.4f}])")
    write_manifest(args.out, "montecarlo",
                   {"template": args.template, "trials": args.trials,
                    "temp_k": args.temp_k, "target_zone": target,
                    "dt_s": args.dt_s, "damping_kg_s": args.damping_kg_s},
                   inputs, seed=args.seed)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="traparray",
                description="Segmented ion-trap array field solver and shuttling simulator")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve per-electrode basis fields")
    sp.add_argument("--layout")
    sp.add_argument("--builtin-t", action="store_true")
    sp.add_argument("--out", required=True)
    sp.add_argument("--tolerance", type=float, default=1e-6)
    sp.add_argument("--max-iters", type=int, default=100_000)
    sp.add_argument("--method", choices=["auto", "sor", "amg"], default="auto")
    sp.set_defaults(func=cmd_solve)

    ap = sub.add_parser("analyze", help="pseudopotential and schedule analysis")
    ap.add_argument("what", choices=["pseudo-profile", "frequencies", "humps", "adiabaticity"])
    ap.add_argument("--fields", required=True)
    ap.add_argument("--layout")
    ap.add_argument("--builtin-t", action="store_true")
    ap.add_argument("--rf-volts", type=float, default=360.0)
    ap.add_argument("--rf-freq-hz", type=float, default=48e6)
    ap.add_argument("--species", default="Cd114+")
    ap.add_argument("--mass-amu", type=float)
    ap.add_argument("--charge-e", type=float, default=1.0)
    ap.add_argument("--linewidth-hz", type=float)
    ap.add_argument("--branch", choices=["stem", "left-arm", "right-arm"], default="stem")
    ap.add_argument("--zone", default="d")
    ap.add_argument("--assignment")
    ap.add_argument("--va-template")
    ap.add_argument("--schedule")
    ap.add_argument("--samples", type=int, default=60)
    ap.add_argument("--out", default="analysis.csv")
    ap.set_defaults(func=cmd_analyze)

    cp = sub.add_parser("compile", help="compile a protocol into a voltage schedule")
    g = cp.add_mutually_exclusive_group(required=True)
    g.add_argument("--protocol")
    g.add_argument("--template")
    cp.add_argument("--layout")
    cp.add_argument("--builtin-t", action="store_true")
    cp.add_argument("--out", required=True)
    cp.add_argument("--filter-tau", type=float, default=0.0)
    cp.add_argument("--check-slew", action="store_true")
    cp.set_defaults(func=cmd_compile)

    sm = sub.add_parser("simulate", help="integrate ion motion under a schedule")
    sm.add_argument("--schedule", required=True)
    sm.add_argument("--fields", required=True)
    sm.add_argument("--layout")
    sm.add_argument("--builtin-t", action="store_true")
    sm.add_argument("--ions", type=int, choices=[1, 2], default=1)
    sm.add_argument("--mode", choices=["full-rf", "pseudo"], default="pseudo")
    sm.add_argument("--temp-k", type=float, default=0.0)
    sm.add_argument("--seed", type=int, default=1)
    sm.add_argument("--dt-s", type=float, default=2e-9)
    sm.add_argument("--damping-kg-s", type=float, default=0.0)
    sm.add_argument("--record-stride", type=int, default=100)
    sm.add_argument("--start-zone", default="d")
    sm.add_argument("--target-zone", default="i")
    sm.add_argument("--rf-volts", type=float, default=360.0)
    sm.add_argument("--rf-freq-hz", type=float, default=48e6)
    sm.add_argument("--species", default="Cd114+")
    sm.add_argument("--mass-amu", type=float)
    sm.add_argument("--charge-e", type=float, default=1.0)
    sm.add_argument("--linewidth-hz", type=float)
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_simulate)

    mc = sub.add_parser("montecarlo", help="success statistics over thermal trials")
    mc.add_argument("--template", required=True)
    mc.add_argument("--fields", required=True)
    mc.add_argument("--layout")
    mc.add_argument("--builtin-t", action="store_true")
    mc.add_argument("--trials", type=int, required=True)
    mc.add_argument("--temp-k", type=float, default=0.0)
    mc.add_argument("--seed", type=int, default=1)
    mc.add_argument("--dt-s", type=float, default=2e-9)
    mc.add_argument("--damping-kg-s", type=float, default=0.0)
    mc.add_argument("--target-zone")
    mc.add_argument("--rf-volts", type=float, default=360.0)
    mc.add_argument("--rf-freq-hz", type=float, default=48e6)
    mc.add_argument("--species", default="Cd114+")
    mc.add_argument("--mass-amu", type=float)
    mc.add_argument("--charge-e", type=float, default=1.0)
    mc.add_argument("--linewidth-hz", type=float)
    mc.add_argument("--out", required=True)
    mc.set_defaults(func=cmd_montecarlo)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (geometry.LayoutError, waveform.ScheduleFormatError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (fields.SolverError, fields.CacheFormatError, analysis.AnalysisError,
            waveform.ScheduleError, protocols.ProtocolError, dynamics.DynamicsError,
            ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
