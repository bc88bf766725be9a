"""Physical constants and default drive/species parameters used across the package."""

import math

from scipy import constants as _sc

ELEMENTARY_CHARGE = _sc.elementary_charge        # C
ATOMIC_MASS = _sc.atomic_mass                    # kg
EPSILON_0 = _sc.epsilon_0                        # F/m
K_BOLTZMANN = _sc.Boltzmann                      # J/K
HBAR = _sc.hbar                                  # J s
COULOMB_CONSTANT = 1.0 / (4.0 * math.pi * EPSILON_0)

# 114Cd+ : the workhorse species for the builtin trap.
CD114_MASS_AMU = 113.9034
CD114_LINEWIDTH = 2.0 * math.pi * 59e6           # rad/s, radiative linewidth of the cooling transition

# Default drive for the builtin T-array.
DEFAULT_RF_VOLTS = 360.0
DEFAULT_RF_FREQ_HZ = 48e6

# Hardware defaults: 1 kOhm series resistor into 1 nF shunt, amplifiers slewing 10 V per us.
DEFAULT_RC_TAU = 1e-6                            # s
DEFAULT_SLEW_LIMIT = 1e7                         # V/s
DEFAULT_VOLTAGE_BOUNDS = (-400.0, 400.0)         # V
