"""Physical constants (CODATA, SI) and material defaults shared by every module."""

from dataclasses import dataclass

from scipy import constants as _sc


@dataclass(frozen=True)
class PhysicalConstants:
    mu_B: float = _sc.physical_constants["Bohr magneton"][0]
    mu_n: float = _sc.physical_constants["nuclear magneton"][0]
    mu_0: float = _sc.mu_0
    hbar: float = _sc.hbar
    h: float = _sc.h
    k_B: float = _sc.k


CONST = PhysicalConstants()

# mu_0 / 4 pi, used by every dipolar coupling
MU0_4PI = CONST.mu_0 / (4.0 * 3.141592653589793)

# CaWO4 and Er3+ defaults
LATTICE_A_NM = 0.524
LATTICE_C_NM = 1.137
G_PERP = 8.38
G_PAR = 1.247
W183_GAMMA_MHZ_PER_T = 1.8
W183_ABUNDANCE = 0.145
# fraction of Er atoms in zero-nuclear-spin isotopes
ER_ZERO_SPIN_FRACTION = 0.77
