"""Physical constants in the wavenumber/femtosecond unit system.

Energies are expressed in cm^-1 and times in fs throughout the package.
Both constants below are derived from CODATA 2018 exact values
(h = 6.62607015e-34 J s, k_B = 1.380649e-23 J/K, c = 2.99792458e8 m/s).
"""

import math

_SPEED_OF_LIGHT_CM_S = 2.99792458e10

# hbar expressed as cm^-1 * fs: the phase accumulated by a state of energy
# E (cm^-1) over t (fs) is E*t/HBAR_CM_FS radians.  6 significant figures:
# 5308.84 cm^-1 fs.
HBAR_CM_FS = 1.0e15 / (2.0 * math.pi * _SPEED_OF_LIGHT_CM_S)

# Boltzmann constant as cm^-1 per kelvin.  6 significant figures: 0.695035.
KB_CM_K = 1.380649e-23 / (6.62607015e-34 * _SPEED_OF_LIGHT_CM_S)
