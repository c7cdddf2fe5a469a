"""Closed-form EPR models: Stark linewidth, instantaneous diffusion, resonator
response and ensemble coupling, pulse/Rabi relations, spin-lattice relaxation.

Rates and frequencies are angular (rad/s) unless a name says Hz; densities
are per m^3; fields in T; lengths in the B1 map in um.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import least_squares

from .constants import CONST, MU0_4PI
from .hamiltonian import FieldConfig, GTensor

TWO_PI = 2.0 * math.pi


class IllConditionedFitError(ValueError):
    pass


# --------------------------------------------------------------------------
# Stark broadening


@dataclass(frozen=True)
class StarkModel:
    alpha: float = 11e-6  # (V/cm)^-1
    phi0: float = 31.0  # deg
    gamma_min: float = 1e6  # FWHM, Hz
    delta_Ec: float = 32e3  # V/cm

    def __post_init__(self):
        if self.alpha <= 0 or self.gamma_min < 0 or self.delta_Ec < 0:
            raise ValueError("alpha > 0, gamma_min >= 0, delta_Ec >= 0 required")


def stark_sensitivity(model: StarkModel, field: FieldConfig, g: GTensor, phi=None):
    """d omega / d E_c in rad/s per V/cm (signed)."""
    phi = field.phi if phi is None else np.asarray(phi, dtype=float)
    s = np.sin(np.deg2rad(2.0 * phi - 2.0 * model.phi0))
    return model.alpha * s / (2.0 * g.g_perp) * CONST.mu_B / CONST.hbar * field.B0


def stark_linewidth(model: StarkModel, field: FieldConfig, g: GTensor, phi=None):
    """Inhomogeneous FWHM in Hz: gamma_min + |d omega/d E_c| delta_Ec / 2 pi."""
    if field.B0 <= 0:
        raise ValueError("B0 must be positive")
    sens = np.abs(stark_sensitivity(model, field, g, phi))
    return model.gamma_min + sens * model.delta_Ec / TWO_PI


def fit_delta_Ec(phi_deg, gamma_hz, field: FieldConfig, g: GTensor, alpha: float = 11e-6) -> StarkModel:
    """Fit (gamma_min, delta_Ec, phi0) to linewidth-vs-angle samples."""
    phi = np.asarray(phi_deg, dtype=float)
    y = np.asarray(gamma_hz, dtype=float)
    if len(phi) < 4:
        raise ValueError("at least 4 angle samples are required")
    k = alpha / (2.0 * g.g_perp) * CONST.mu_B / CONST.hbar * field.B0 / TWO_PI

    def shape(p0):
        return np.abs(np.sin(np.deg2rad(2.0 * phi - 2.0 * p0))) * k

    # phi0 grid with linear (gamma_min, delta_Ec) at each point
    best = None
    for p0 in np.arange(0.0, 180.0, 0.25):
        basis = np.column_stack([np.ones_like(phi), shape(p0)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        r = basis @ coef - y
        if best is None or r @ r < best[0]:
            best = (float(r @ r), p0, coef)
    _, p0, (gmin0, dec0) = best
    basis = np.column_stack([np.ones_like(phi), shape(p0)])
    if np.linalg.cond(basis) > 1e8 or np.ptp(shape(p0)) < 1e-12 * max(k, 1.0):
        raise IllConditionedFitError("angle samples do not constrain the Stark term")

    def resid(p):
        return p[0] + p[1] * shape(p[2]) - y

    def jac(p):
        arg = np.deg2rad(2.0 * phi - 2.0 * p[2])
        d_phi0 = p[1] * k * np.sign(np.sin(arg)) * np.cos(arg) * (-2.0) * np.pi / 180.0
        return np.column_stack([np.ones_like(phi), shape(p[2]), d_phi0])

    res = least_squares(resid, [gmin0, dec0, p0], jac=jac, method="lm", x_scale="jac",
                        ftol=1e-15, xtol=1e-15, gtol=1e-15)
    gmin, dec, p0 = res.x
    if dec < 0:
        raise IllConditionedFitError("negative Stark field amplitude")
    return StarkModel(alpha=alpha, phi0=float(p0) % 180.0, gamma_min=float(gmin), delta_Ec=float(dec))


# --------------------------------------------------------------------------
# instantaneous diffusion


@dataclass(frozen=True)
class SpinLine:
    omega_s: float = TWO_PI * 7.881e9
    Gamma: float = TWO_PI * 10e6  # FWHM, rad/s
    rho: float = 0.7e19  # zero-nuclear-spin Er density, m^-3

    def __post_init__(self):
        if self.Gamma <= 0 or self.rho < 0:
            raise ValueError("Gamma > 0 and rho >= 0 required")


def pulse_bandwidth(dt: float) -> float:
    """Square-pulse excitation bandwidth (rad/s): 2 pi / dt (4 us -> 250 kHz)."""
    if dt <= 0:
        raise ValueError("pulse duration must be positive")
    return TWO_PI / dt


def excitation_bandwidth(kappa: float, dt: float) -> float:
    """Spectral width actually excited: the narrower of resonator and pulse."""
    return min(kappa, pulse_bandwidth(dt))


def instantaneous_diffusion_T2(line: SpinLine, bandwidth: float, g_eff: float, theta2: float = math.pi) -> float:
    """T2 (s) from instantaneous diffusion; math.inf when no resonant spins exist."""
    if bandwidth > line.Gamma:
        warnings.warn("excitation bandwidth exceeds the inhomogeneous linewidth", stacklevel=2)
    rate = (
        2.5 * MU0_4PI * (g_eff * CONST.mu_B) ** 2 / CONST.hbar
        * line.rho * bandwidth / line.Gamma * math.sin(theta2 / 2.0) ** 2
    )
    return math.inf if rate == 0 else 1.0 / rate


def zero_spin_density(er_total_cm3: float, fraction: float = 0.77) -> float:
    """Zero-nuclear-spin Er density in m^-3 from total [Er3+] in cm^-3."""
    return er_total_cm3 * fraction * 1e6


# --------------------------------------------------------------------------
# resonator


@dataclass(frozen=True)
class ResonatorParams:
    omega0: float
    kappa_c: float
    kappa_int: float

    def __post_init__(self):
        if self.omega0 <= 0 or self.kappa_c <= 0 or self.kappa_int <= 0:
            raise ValueError("resonator rates must be positive")

    @property
    def kappa(self) -> float:
        return self.kappa_c + self.kappa_int

    @classmethod
    def from_quality(cls, f0_hz: float, qc: float, qi: float) -> "ResonatorParams":
        w0 = TWO_PI * f0_hz
        return cls(w0, w0 / qc, w0 / qi)


# measured resonator parameters (frequency Hz, Qc, Qi)
RESONATORS = {
    1: (7.025e9, 250e3, 45e3),
    2: (7.508e9, 15e3, 70e3),
    3: (7.881e9, 29e3, 100e3),
}


def reflection_coefficient(res: ResonatorParams, line: SpinLine, g_ens: float, omega):
    """Complex r(omega) of a resonator coupled to a Lorentzian spin ensemble."""
    omega = np.asarray(omega, dtype=float)
    spins = g_ens**2 / ((omega - line.omega_s) + 0.5j * line.Gamma)
    return 1j * res.kappa_c / ((omega - res.omega0) + 0.5j * res.kappa - spins) - 1.0


def broadened_internal_loss(res: ResonatorParams, line: SpinLine, g_ens: float, omega):
    omega = np.asarray(omega, dtype=float)
    return res.kappa_int + g_ens**2 * line.Gamma / ((omega - line.omega_s) ** 2 + (line.Gamma / 2.0) ** 2)


# --------------------------------------------------------------------------
# B1 field maps and couplings


@dataclass
class B1Map:
    """Vacuum-fluctuation field on a rectilinear (y, z) grid below a wire along x.

    Arrays b1x, b1y, b1z have shape (len(y_um), len(z_um)) in tesla.
    """

    y_um: np.ndarray
    z_um: np.ndarray
    b1x: np.ndarray
    b1y: np.ndarray
    b1z: np.ndarray
    length_um: float = 630.0

    def cell_areas_m2(self) -> np.ndarray:
        wy = _trapezoid_weights(self.y_um * 1e-6)
        wz = _trapezoid_weights(self.z_um * 1e-6)
        return np.outer(wy, wz)

    def to_csv(self, path) -> None:
        yy, zz = np.meshgrid(self.y_um, self.z_um, indexing="ij")
        data = np.column_stack([yy.ravel(), zz.ravel(), self.b1x.ravel(), self.b1y.ravel(), self.b1z.ravel()])
        header = "y_um,z_um,B1x_T_per_sqrt_photon,B1y,B1z"
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.8e")


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x, dtype=float)
    if len(x) > 1:
        d = np.diff(x)
        w[:-1] += d / 2.0
        w[1:] += d / 2.0
    return np.abs(w)


def read_b1map(path, length_um: float = 630.0) -> B1Map:
    text = Path(path).read_text().splitlines()
    header = [h.strip() for h in text[0].split(",")]
    need = ["y_um", "z_um"]
    if any(n not in header for n in need) or len(header) < 5:
        raise ValueError("B1 map must have columns y_um, z_um, B1x, B1y, B1z")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    y = np.unique(data[:, 0])
    z = np.unique(data[:, 1])
    if len(y) * len(z) != len(data):
        raise ValueError("B1 map is not a complete rectilinear grid")
    order = np.lexsort((data[:, 1], data[:, 0]))
    grid = data[order].reshape(len(y), len(z), -1)
    return B1Map(y, z, grid[..., 2], grid[..., 3], grid[..., 4], length_um=length_um)


def vacuum_current(omega0: float, z0: float = 40.0) -> float:
    """rms zero-point current of the resonator (A)."""
    return omega0 * math.sqrt(CONST.hbar / (2.0 * z0))


def default_grid(width_um: float, ly_um: float = 400.0, lz_um: float = 200.0, n: int = 300):
    """Graded grid, fine near the wire: y in [-ly/2, ly/2], z in [-lz, -z_min]."""
    y_pos = np.geomspace(0.01, ly_um / 2.0, n)
    inner = np.linspace(0.0, width_um / 2.0, 40)
    y_half = np.unique(np.concatenate([inner, y_pos]))
    y = np.concatenate([-y_half[::-1], y_half[1:]])
    z = -np.geomspace(0.05, lz_um, n)[::-1]
    return y, z


def wire_b1map(
    omega0: float,
    width_um: float = 5.0,
    z0: float = 40.0,
    length_um: float = 630.0,
    y_um=None,
    z_um=None,
    n_filaments: int = 64,
) -> B1Map:
    """Field of a thin conductor carrying the vacuum current.

    width_um = 0 gives the ideal thin wire, B = mu0 I / (2 pi r); otherwise the
    current is spread uniformly over `n_filaments` filaments across the width.
    """
    if y_um is None or z_um is None:
        y_um, z_um = default_grid(width_um)
    y_um = np.asarray(y_um, dtype=float)
    z_um = np.asarray(z_um, dtype=float)
    current = vacuum_current(omega0, z0)
    yy, zz = np.meshgrid(y_um * 1e-6, z_um * 1e-6, indexing="ij")
    if width_um > 0:
        offsets = (np.arange(n_filaments) + 0.5) / n_filaments - 0.5
        offsets = offsets * width_um * 1e-6
    else:
        offsets = np.zeros(1)
    by = np.zeros_like(yy)
    bz = np.zeros_like(yy)
    pref = 2.0 * MU0_4PI * current / len(offsets)
    for y0 in offsets:
        dy = yy - y0
        r2 = dy**2 + zz**2
        by += -pref * zz / r2
        bz += pref * dy / r2
    return B1Map(y_um, z_um, np.zeros_like(by), by, bz, length_um=length_um)


def single_spin_coupling(b1: B1Map, g: GTensor, delta_phi: float) -> np.ndarray:
    """g0 (rad/s) at each map point."""
    c = math.cos(math.radians(delta_phi))
    return CONST.mu_B / (2.0 * CONST.hbar) * np.sqrt((g.g_par * b1.b1z) ** 2 + (g.g_perp * c * b1.b1y) ** 2)


def coupling_integral(b1: B1Map, g: GTensor, delta_phi: float) -> float:
    """Volume integral of the squared single-spin coupling per unit density (rad^2 s^-2 m^3)."""
    for arr in (b1.b1y, b1.b1z):
        if arr is None or np.shape(arr) != (len(b1.y_um), len(b1.z_um)):
            raise ValueError("B1 map lacks the y/z components on its grid")
    g0 = single_spin_coupling(b1, g, delta_phi)
    area = trapezoid(trapezoid(g0**2, b1.z_um * 1e-6, axis=1), b1.y_um * 1e-6)
    return float(abs(area) * b1.length_um * 1e-6)


def ensemble_coupling(b1: B1Map, rho: float, g: GTensor, delta_phi: float = 21.0) -> float:
    """Collective coupling g_ens (rad/s) of density rho (m^-3) under the map."""
    if rho < 0:
        raise ValueError("density must be non-negative")
    return math.sqrt(rho * coupling_integral(b1, g, delta_phi))


def concentration_from_coupling(b1: B1Map, g_ens: float, g: GTensor, delta_phi: float = 21.0) -> float:
    """Invert ensemble_coupling: density (m^-3) giving the measured g_ens."""
    return g_ens**2 / coupling_integral(b1, g, delta_phi)


# --------------------------------------------------------------------------
# pulses


@dataclass(frozen=True)
class PulseContext:
    beta: float  # (photons/s)^(1/2)
    dt: float  # s
    theta1: float = math.pi / 2
    theta2: float = math.pi

    def __post_init__(self):
        if self.beta < 0 or self.dt <= 0:
            raise ValueError("beta >= 0 and dt > 0 required")


def beta_from_power(p_in_watt: float, omega0: float) -> float:
    return math.sqrt(p_in_watt / (CONST.hbar * omega0))


def rabi_frequency(g0, beta, res: ResonatorParams):
    """On-resonance Rabi angular frequency 4 g0 beta sqrt(kappa_c) / kappa."""
    return 4.0 * np.asarray(g0) * beta * math.sqrt(res.kappa_c) / res.kappa


def selected_coupling(res: ResonatorParams, pulse: PulseContext) -> float:
    """Coupling for which a pulse of amplitude beta and duration dt is a pi rotation."""
    if pulse.beta <= 0:
        raise ValueError("beta must be positive")
    return math.pi * res.kappa / (4.0 * pulse.dt * pulse.beta * math.sqrt(res.kappa_c))


def rabi_and_selection(res: ResonatorParams, pulse: PulseContext, g0=None):
    """(Rabi frequency at g0, selected g0); g0 defaults to the selected coupling."""
    sel = selected_coupling(res, pulse)
    return float(rabi_frequency(sel if g0 is None else g0, pulse.beta, res)), sel


# --------------------------------------------------------------------------
# spin-lattice relaxation


def direct_phonon_T1(t1_0k: float, omega0: float, temperature):
    """T1(T) = T1(0) tanh(hbar omega0 / 2 k_B T); T = 0 gives T1(0)."""
    temperature = np.asarray(temperature, dtype=float)
    if np.any(temperature < 0):
        raise ValueError("temperature must be non-negative")
    with np.errstate(divide="ignore"):
        arg = np.where(temperature > 0, CONST.hbar * omega0 / (2.0 * CONST.k_B * np.where(temperature > 0, temperature, 1.0)), np.inf)
    out = t1_0k * np.tanh(arg)
    return float(out) if out.ndim == 0 else out


def fit_direct_phonon(temperature, t1, omega0: float):
    """Least-squares T1(0) and its 1-sigma error from T1(T) samples."""
    f = direct_phonon_T1(1.0, omega0, temperature)
    y = np.asarray(t1, dtype=float)
    t10 = float(f @ y / (f @ f))
    r = y - t10 * f
    dof = max(len(y) - 1, 1)
    err = math.sqrt(float(r @ r) / dof / float(f @ f))
    return t10, err


def omega5_scaling(rate_ref: float, omega_ref: float, omega):
    if omega_ref <= 0 or np.any(np.asarray(omega) <= 0):
        raise ValueError("frequencies must be positive")
    return rate_ref * (np.asarray(omega, dtype=float) / omega_ref) ** 5


def t1_anisotropy(a: float, b: float, phi1: float, phi):
    """T1(phi) from 1/T1 = A + B sin(4 phi + phi1), angles in degrees."""
    if a <= abs(b):
        raise ValueError("A must exceed |B| for a positive relaxation rate")
    rate = a + b * np.sin(np.deg2rad(4.0 * np.asarray(phi, dtype=float) + phi1))
    return 1.0 / rate


def fit_t1_anisotropy(phi, t1):
    """(A, B, phi1) from T1(phi) samples; B >= 0, phi1 in [0, 360)."""
    phi = np.deg2rad(4.0 * np.asarray(phi, dtype=float))
    rate = 1.0 / np.asarray(t1, dtype=float)
    basis = np.column_stack([np.ones_like(phi), np.sin(phi), np.cos(phi)])
    (a, bc, bs), *_ = np.linalg.lstsq(basis, rate, rcond=None)
    b = math.hypot(bc, bs)
    phi1 = math.degrees(math.atan2(bs, bc)) % 360.0

    def resid(p):
        return 1.0 / (p[0] + p[1] * np.sin(phi + np.deg2rad(p[2]))) - 1.0 / rate

    res = least_squares(resid, [a, b, phi1], method="lm")
    a, b, phi1 = res.x
    if b < 0:
        b, phi1 = -b, phi1 + 180.0
    return float(a), float(b), float(phi1 % 360.0)
