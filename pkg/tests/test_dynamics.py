import math

import numpy as np
import pytest
import scipy.constants as sc

from traparray.analysis import IonSpecies, RfDrive
from traparray.dynamics import (
    CoulombSingularityError,
    DynamicsError,
    IonState,
    SimConfig,
    StepSizeError,
    dominant_frequency,
    integrate,
    integrate_batch,
    kinetic_energy_gain,
    two_ion_equilibrium,
)
from traparray.fields import HarmonicWellField, QuadrupoleField
from traparray.waveform import VoltageSchedule


@pytest.fixture
def cd():
    return IonSpecies.cd114()


def static_schedule(duration, channels=()):
    return VoltageSchedule(duration=duration,
                           channels={c: [(0.0, 0.0), (duration, 0.0)] for c in channels})


def harmonic_well(cd, f_hz=1e6, centre=(0.0, 0.0, 0.0)):
    w = 2 * math.pi * f_hz
    return HarmonicWellField(omegas=[w, w, w], mass=cd.mass, charge=cd.charge, centre=centre)


class TestOscillatorOracle:
    def test_matches_cosine_over_100_periods(self, cd):
        f0 = 1e6
        well = harmonic_well(cd, f0)
        drive = RfDrive.default()
        x0 = 1e-6
        state = IonState(positions=[[x0, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        T = 100 / f0
        cfg = SimConfig(mode="pseudopotential", dt=1 / (f0 * 200), record_stride=7,
                        omega_max=2 * math.pi * f0)
        traj = integrate(state, well, drive, static_schedule(T), cfg)
        expect = x0 * np.cos(2 * math.pi * f0 * traj.times)
        err = np.abs(traj.positions[:, 0, 0] - expect).max() / x0
        assert err < 1e-4

    def test_bit_identical_across_runs(self, cd):
        well = harmonic_well(cd)
        drive = RfDrive.default()
        state = lambda: IonState(positions=[[1e-6, 2e-6, 0]], velocities=[[0, 0.05, 0]], species=cd)
        cfg = SimConfig(mode="pseudopotential", dt=2e-9, record_stride=11,
                        omega_max=2 * math.pi * 1e6)
        t1 = integrate(state(), well, drive, static_schedule(20e-6), cfg)
        t2 = integrate(state(), well, drive, static_schedule(20e-6), cfg)
        assert np.array_equal(t1.positions, t2.positions)
        assert np.array_equal(t1.velocities, t2.velocities)


class TestSymplectic:
    def test_energy_drift_below_1e6_relative_over_1e6_steps(self, cd):
        f0 = 1e6
        well = harmonic_well(cd, f0)
        drive = RfDrive.default()
        state = IonState(positions=[[2e-6, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        dt = 2e-9
        steps = 1_000_000
        cfg = SimConfig(mode="pseudopotential", dt=dt, record_stride=200,
                        omega_max=2 * math.pi * f0)
        traj = integrate(state, well, drive, static_schedule(steps * dt), cfg)
        # total energy per sample: kinetic + harmonic potential
        w = 2 * math.pi * f0
        pe = 0.5 * cd.mass * w * w * (traj.positions[:, 0, :] ** 2).sum(axis=1) / sc.elementary_charge
        e = traj.kinetic_ev + pe
        n = len(e)
        head = e[: n // 10].mean()
        tail = e[-n // 10:].mean()
        assert abs(tail - head) / head < 1e-6


class TestMathieu:
    def _quadrupole_drive(self, cd, q_mathieu, r0=150e-6, f_rf=48e6):
        omega = 2 * math.pi * f_rf
        v0 = q_mathieu * cd.mass * omega ** 2 * r0 ** 2 / (4 * cd.charge)
        return QuadrupoleField(r0=r0), RfDrive(v0, omega)

    def test_full_rf_secular_peak_at_q02(self, cd):
        q = 0.2
        field, drive = self._quadrupole_drive(cd, q)
        omega = drive.angular_frequency
        f_sec_lo = q * omega / (2 * math.sqrt(2)) / (2 * math.pi)
        state = IonState(positions=[[2e-6, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        dt = (2 * math.pi / omega) / 32
        T = 220 / f_sec_lo
        cfg = SimConfig(mode="full_rf", dt=dt, record_stride=4)
        traj = integrate(state, field, drive, static_schedule(T), cfg)
        f_peak = dominant_frequency(traj.times, traj.positions[:, 0, 0],
                                    f_min=0.2 * f_sec_lo, f_max=3 * f_sec_lo)
        assert abs(f_peak - f_sec_lo) / f_sec_lo < 0.02

    def test_full_rf_agrees_with_pseudopotential_mode_within_5pct(self, cd):
        """Secular frequency extracted from full-rf dynamics vs the
        pseudopotential-mode trajectory of the same trap, q < 0.3."""
        q = 0.25
        field, drive = self._quadrupole_drive(cd, q)
        omega = drive.angular_frequency
        f_sec = q * omega / (2 * math.sqrt(2)) / (2 * math.pi)
        state = lambda: IonState(positions=[[2e-6, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        T = 150 / f_sec
        full = integrate(state(), field, drive, static_schedule(T),
                         SimConfig(mode="full_rf", dt=(2 * math.pi / omega) / 32, record_stride=4))
        pseudo = integrate(state(), field, drive, static_schedule(T),
                           SimConfig(mode="pseudopotential", dt=1 / (f_sec * 40),
                                     record_stride=2, omega_max=2 * math.pi * f_sec))
        f_full = dominant_frequency(full.times, full.positions[:, 0, 0],
                                    f_min=0.2 * f_sec, f_max=3 * f_sec)
        f_pseudo = dominant_frequency(pseudo.times, pseudo.positions[:, 0, 0],
                                      f_min=0.2 * f_sec, f_max=3 * f_sec)
        assert abs(f_full - f_pseudo) / f_pseudo < 0.05

    def test_step_size_invariant_enforced(self, cd):
        field, drive = self._quadrupole_drive(cd, 0.2)
        cfg = SimConfig(mode="full_rf", dt=1e-8)  # > (2pi/Omega)/20
        state = IonState(positions=[[1e-6, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        with pytest.raises(StepSizeError, match="full_rf step invariant"):
            integrate(state, field, drive, static_schedule(1e-6), cfg)


class TestDissipationAndStray:
    def test_damping_decays_kinetic_energy(self, cd):
        f0 = 1e6
        well = harmonic_well(cd, f0)
        drive = RfDrive.default()
        beta = cd.mass / 200e-6  # 1/e velocity time of 200 us
        state = IonState(positions=[[3e-6, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        cfg = SimConfig(mode="pseudopotential", dt=4e-9, damping=beta, record_stride=50,
                        omega_max=2 * math.pi * f0)
        traj = integrate(state, well, drive, static_schedule(600e-6), cfg)
        sec = traj.secular_kinetic_ev
        n = len(sec)
        thirds = sec[n // 4], sec[n // 2], sec[3 * n // 4]
        assert thirds[0] > thirds[1] > thirds[2]
        assert thirds[2] < 0.05 * thirds[0]

    def test_uniform_stray_field_displaces_equilibrium(self, cd):
        f0 = 0.5e6
        w = 2 * math.pi * f0
        well = harmonic_well(cd, f0)
        drive = RfDrive.default()
        e_stray = 20.0  # V/m
        beta = cd.mass / 50e-6
        cfg = SimConfig(mode="pseudopotential", dt=4e-9, damping=beta,
                        stray_field=(e_stray, 0, 0), record_stride=100,
                        omega_max=w)
        state = IonState(positions=[[0, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        traj = integrate(state, well, drive, static_schedule(800e-6), cfg)
        expect = cd.charge * e_stray / (cd.mass * w * w)
        assert traj.positions[-1, 0, 0] == pytest.approx(expect, rel=0.01)

    def test_two_ion_momentum_conserved_with_coulomb_only(self, cd):
        free = HarmonicWellField(omegas=[0.0, 0.0, 0.0], mass=cd.mass, charge=cd.charge)
        drive = RfDrive(0.0, 2 * math.pi * 48e6)
        d0 = 20e-6
        state = IonState(positions=[[-d0 / 2, 0, 0], [d0 / 2, 0, 0]],
                         velocities=[[50.0, 0, 0], [0.0, 0, 0]], species=cd)
        cfg = SimConfig(mode="pseudopotential", dt=5e-9, record_stride=100)
        traj = integrate(state, free, drive, static_schedule(100e-6), cfg)
        p = traj.velocities.sum(axis=1)  # total momentum / m per sample
        assert np.abs(p - p[0]).max() <= 1e-9 * np.abs(p[0]).max()

    def test_coulomb_singularity_aborts(self, cd):
        free = HarmonicWellField(omegas=[0.0, 0.0, 0.0], mass=cd.mass, charge=cd.charge)
        drive = RfDrive(0.0, 2 * math.pi * 48e6)
        state = IonState(positions=[[-1e-6, 0, 0], [1e-6, 0, 0]],
                         velocities=[[2000.0, 0, 0], [-2000.0, 0, 0]], species=cd)
        cfg = SimConfig(mode="pseudopotential", dt=1e-10, record_stride=1000)
        with pytest.raises(CoulombSingularityError):
            integrate(state, free, drive, static_schedule(20e-6), cfg)


class TestTwoIonEquilibrium:
    def test_spacing_matches_closed_form(self, cd):
        f_axial = 20e3
        w = 2 * math.pi * f_axial
        well = HarmonicWellField(omegas=[2 * math.pi * 1e6, w, 2 * math.pi * 1e6],
                                 mass=cd.mass, charge=cd.charge)
        drive = RfDrive(0.0, 2 * math.pi * 48e6)
        pair = two_ion_equilibrium(well, drive, cd, {}, np.zeros(3))
        spacing = np.linalg.norm(pair[1] - pair[0])
        expect = (cd.charge ** 2 / (2 * math.pi * sc.epsilon_0 * cd.mass * w ** 2)) ** (1 / 3)
        assert spacing == pytest.approx(expect, rel=0.01)

    def test_spacing_scaling_with_frequency(self, cd):
        drive = RfDrive(0.0, 2 * math.pi * 48e6)

        def spacing(f_axial):
            w = 2 * math.pi * f_axial
            well = HarmonicWellField(omegas=[2 * math.pi * 1e6, w, 2 * math.pi * 1e6],
                                     mass=cd.mass, charge=cd.charge)
            pair = two_ion_equilibrium(well, drive, cd, {}, np.zeros(3))
            return np.linalg.norm(pair[1] - pair[0])

        ratio = spacing(20e3) / spacing(40e3)
        assert ratio == pytest.approx(2 ** (2 / 3), rel=0.01)


class TestEnergyGain:
    def test_static_trap_gain_is_negligible(self, cd):
        f0 = 1e6
        well = harmonic_well(cd, f0)
        drive = RfDrive.default()
        state = IonState(positions=[[1e-6, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        cfg = SimConfig(mode="pseudopotential", dt=2e-9, record_stride=10,
                        omega_max=2 * math.pi * f0)
        traj = integrate(state, well, drive, static_schedule(200e-6), cfg)
        gain = kinetic_energy_gain(traj, window=10 / f0)
        initial = traj.kinetic_ev.max()
        assert abs(gain) < 0.01 * initial

    def test_forced_oscillator_closed_form(self, cd):
        """Forced-oscillator oracle: a well that jumps to constant velocity v
        and stops after time dT leaves the ion with oscillation energy
        m v^2 (1 - cos(w dT)), whose time-averaged kinetic part is half.
        With w*dT an odd multiple of pi/2 the averaged gain is m v^2 / 2."""
        f0 = 0.5e6
        w = 2 * math.pi * f0
        well = harmonic_well(cd, f0)
        drive = RfDrive.default()
        v_well = 2.0  # m/s
        move_time = 10.25 / f0  # cos(w dT) = 0
        v_chan = v_well * move_time / HarmonicWellField.CENTRE_SCALE
        total = 3 * move_time
        sched = VoltageSchedule(duration=total, channels={
            "cx": [(0.0, 0.0), (move_time, 0.0), (2 * move_time, v_chan),
                   (total, v_chan)],
        })
        # well velocity during the middle third is v_well
        state = IonState(positions=[[0, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        cfg = SimConfig(mode="pseudopotential", dt=1 / (f0 * 400), record_stride=5,
                        omega_max=w)
        traj = integrate(state, well, drive, sched, cfg)
        window = 5 / f0
        gain = kinetic_energy_gain(traj, window=window)
        # sudden start + sudden stop after (k + 1/4) periods: oscillation
        # energy m v^2 (1 - cos(w dT)) = m v^2; mean kinetic = half of that
        expect = 0.5 * cd.mass * v_well ** 2 * (1 - math.cos(w * move_time)) / sc.elementary_charge
        assert gain == pytest.approx(expect, rel=0.05)

    def test_window_too_large_rejected(self, cd):
        well = harmonic_well(cd)
        drive = RfDrive.default()
        state = IonState(positions=[[1e-6, 0, 0]], velocities=[[0, 0, 0]], species=cd)
        cfg = SimConfig(mode="pseudopotential", dt=2e-9, record_stride=10,
                        omega_max=2 * math.pi * 1e6)
        traj = integrate(state, well, drive, static_schedule(20e-6), cfg)
        with pytest.raises(DynamicsError, match="window"):
            kinetic_energy_gain(traj, window=15e-6)


class TestBatchIntegrator:
    def test_batch_matches_single_trajectory_windows(self, cd):
        f0 = 1e6
        well = harmonic_well(cd, f0)
        drive = RfDrive.default()
        sched = static_schedule(50e-6)
        cfg = SimConfig(mode="pseudopotential", dt=2e-9, record_stride=1,
                        omega_max=2 * math.pi * f0)
        pos = np.array([[1e-6, 0, 0], [0, 2e-6, 0]])
        vel = np.zeros((2, 3))
        window = 10 / f0
        batch = integrate_batch(pos, vel, cd, well, drive, sched, cfg, window=window)
        for k in range(2):
            state = IonState(positions=pos[k:k + 1], velocities=vel[k:k + 1], species=cd)
            traj = integrate(state, well, drive, sched, cfg)
            assert batch.tail_ke[k] == pytest.approx(traj.mean_tail_kinetic_ev(window), rel=1e-6)
            assert np.allclose(batch.tail_positions[k], traj.mean_tail_position(window)[0],
                               rtol=1e-6, atol=1e-12)
        assert not batch.escaped.any()
