"""Inversion-recovery T1 versus drive amplitude for spins spread in detuning and coupling.

Each spin (detuning delta, coupling g0) relaxes at Gamma_P(g0, delta) + Gamma_sl.
The sequence beta - T - beta/2 - tau - beta - tau - echo is modelled with
instantaneous rotations whose angle follows the resonator-filtered Rabi
frequency; the echo is summed over both (independent) distributions and each
simulated recovery is fitted with the shared exponential kernel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .analytic import (
    B1Map,
    PulseContext,
    RESONATORS,
    ResonatorParams,
    TWO_PI,
    rabi_frequency,
    single_spin_coupling,
    wire_b1map,
)
from .fitkit import FitError, fit_exponential
from .hamiltonian import GTensor

log = logging.getLogger(__name__)


@dataclass
class CouplingDistribution:
    g0_values: np.ndarray  # rad/s
    weights: np.ndarray
    source: str = "analytic_wire"

    def __post_init__(self):
        self.g0_values = np.asarray(self.g0_values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.g0_values.shape != self.weights.shape:
            raise ValueError("g0_values and weights must have equal length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.g0_values / TWO_PI, self.weights]),
                   delimiter=",", header="g0_Hz,weight", comments="", fmt="%.8e")


@dataclass
class RelaxGrid:
    detuning: np.ndarray  # rad/s
    g0_values: np.ndarray  # rad/s
    resonator: ResonatorParams
    gamma_sl: float  # 1/s
    width_um: float = 2.0

    @property
    def kappa(self) -> float:
        return self.resonator.kappa


# (wire width um, resonator id, detuning bins, span in kappa, g0 range Hz)
WIRES = {
    "2um": (2.0, 1, 420, 4.0, (1.0, 1000.0)),
    "5um": (5.0, 3, 480, 3.5, (0.5, 500.0)),
}


def paper_grid(wire: str = "2um", t1_sl: float = 4.8) -> RelaxGrid:
    """Grids used for the 2 um and 5 um inductance wires.

    kappa/2pi is 185 kHz (resonator 1) and 350 kHz (resonator 3).
    """
    if wire not in WIRES:
        raise ValueError(f"unknown wire {wire!r}; choose from {sorted(WIRES)}")
    if t1_sl <= 0:
        raise ValueError("t1_sl must be positive")
    width, res_id, nbins, span, (glo, ghi) = WIRES[wire]
    res = ResonatorParams.from_quality(*RESONATORS[res_id])
    kappa = res.kappa
    detuning = np.linspace(-span * kappa, span * kappa, nbins)
    g0 = TWO_PI * np.linspace(glo, ghi, 120)
    return RelaxGrid(detuning, g0, res, 1.0 / t1_sl, width)


def purcell_rate(g0, delta, kappa: float):
    """kappa g0^2 / (kappa^2/4 + delta^2); equals 4 g0^2 / kappa on resonance."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    g0 = np.asarray(g0, dtype=float)
    delta = np.asarray(delta, dtype=float)
    return kappa * g0**2 / (kappa**2 / 4.0 + delta**2)


def echo_weight(g0, theta1, theta2):
    """Echo amplitude radiated by one spin: g0 sin(theta1) sin^2(theta2 / 2)."""
    return np.asarray(g0) * np.sin(theta1) * np.sin(np.asarray(theta2) / 2.0) ** 2


def drive_filter(delta, kappa: float):
    """Resonator amplitude response at detuning delta."""
    return (kappa / 2.0) / np.sqrt(kappa**2 / 4.0 + np.asarray(delta, dtype=float) ** 2)


def coupling_distribution(
    b1: B1Map,
    g0_values,
    g: GTensor | None = None,
    delta_phi: float = 21.0,
) -> CouplingDistribution:
    """Spin count per coupling value from a B1 map.

    Each map point carries its cell area; counts go to the nearest g0 value
    (points outside the half-spacing margins are dropped).
    """
    g = g or GTensor()
    g0_values = np.asarray(g0_values, dtype=float)
    g0 = single_spin_coupling(b1, g, delta_phi).ravel()
    area = b1.cell_areas_m2().ravel()
    mids = 0.5 * (g0_values[1:] + g0_values[:-1])
    lo = g0_values[0] - (mids[0] - g0_values[0]) if len(mids) else g0_values[0] * 0.5
    hi = g0_values[-1] + (g0_values[-1] - mids[-1]) if len(mids) else g0_values[0] * 1.5
    edges = np.concatenate([[lo], mids, [hi]])
    weights, _ = np.histogram(g0, bins=edges, weights=area)
    return CouplingDistribution(g0_values, weights * b1.length_um * 1e-6, "field_map")


def wire_distribution(grid: RelaxGrid, delta_phi: float = 21.0, z0: float = 40.0) -> CouplingDistribution:
    b1 = wire_b1map(grid.resonator.omega0, width_um=grid.width_um, z0=z0)
    dist = coupling_distribution(b1, grid.g0_values, delta_phi=delta_phi)
    dist.source = "analytic_wire"
    return dist


def tail_exponent(dist: CouplingDistribution, g_lo: float, g_hi: float) -> float:
    """Power-law exponent of the coupling density between g_lo and g_hi (rad/s)."""
    g = dist.g0_values
    widths = np.gradient(g)
    dens = dist.weights / widths
    sel = (g >= g_lo) & (g <= g_hi) & (dens > 0)
    if sel.sum() < 3:
        raise ValueError("too few populated bins in the requested range")
    slope, _ = np.polyfit(np.log(g[sel]), np.log(dens[sel]), 1)
    return float(slope)


def _spin_arrays(grid: RelaxGrid, dist: CouplingDistribution, pulse: PulseContext):
    delta = grid.detuning[:, None]
    g0 = dist.g0_values[None, :]
    w = np.ones(len(grid.detuning))[:, None] / len(grid.detuning) * dist.weights[None, :]
    # detuned spins see the drive through the resonator response
    omega = rabi_frequency(g0, pulse.beta, grid.resonator) * drive_filter(delta, grid.kappa)
    theta = omega * pulse.dt
    # inversion and refocusing pulses share amplitude beta, the first detection pulse has beta/2
    z_inv = np.cos(theta)
    amp = w * echo_weight(g0, theta / 2.0, theta)
    rate = purcell_rate(g0, delta, grid.kappa) + grid.gamma_sl
    return amp.ravel(), z_inv.ravel(), np.broadcast_to(rate, amp.shape).ravel()


def inversion_recovery_signal(grid: RelaxGrid, dist: CouplingDistribution, pulse: PulseContext, T):
    """Echo amplitude after an inversion pulse and recovery delay T (s); array in T."""
    T = np.atleast_1d(np.asarray(T, dtype=float))
    if np.any(T < 0):
        raise ValueError("recovery delay must be non-negative")
    amp, z_inv, rate = _spin_arrays(grid, dist, pulse)
    keep = amp != 0
    amp, z_inv, rate = amp[keep], z_inv[keep], rate[keep]
    with np.errstate(over="ignore"):
        decay = np.exp(-np.outer(T, rate))
    polar = 1.0 - (1.0 - z_inv)[None, :] * decay
    return polar @ amp


def steady_state_signal(grid, dist, pulse) -> float:
    amp, _, _ = _spin_arrays(grid, dist, pulse)
    return float(amp.sum())


def recovery_delays(grid, dist, pulse, n: int = 60) -> np.ndarray:
    """Delay grid spanning five weighted-mean recovery times."""
    amp, z_inv, rate = _spin_arrays(grid, dist, pulse)
    w = np.abs(amp * (1.0 - z_inv))
    mean_rate = float((w * rate).sum() / w.sum()) if w.sum() > 0 else grid.gamma_sl
    return np.linspace(0.0, 5.0 / mean_rate, n)


def fit_recovery(grid: RelaxGrid, dist: CouplingDistribution, pulse: PulseContext,
                 n_delays: int = 60, max_iter: int = 6) -> float:
    """Single-exponential T1 with delays spanning five times the fitted T1.

    The window starts from the weighted-mean recovery rate and is updated
    until the fitted T1 changes by less than 1 %; it never exceeds 5 / Gamma_sl.
    """
    t_max = recovery_delays(grid, dist, pulse, n_delays)[-1]
    t1 = None
    for _ in range(max_iter):
        T = np.linspace(0.0, t_max, n_delays)
        new = fit_exponential(T, inversion_recovery_signal(grid, dist, pulse, T)).T1
        if t1 is not None and abs(new - t1) <= 0.01 * t1:
            return new
        t1 = new
        t_max = min(5.0 * t1, 5.0 / grid.gamma_sl)
    return t1


def t1_vs_beta(
    grid: RelaxGrid,
    dist: CouplingDistribution,
    beta_list,
    dt: float = 1e-6,
    attenuation_db: float = 0.0,
):
    """Fitted T1 for each source amplitude beta; failed fits give NaN and a flag.

    The amplitude at the resonator is beta * 10^(-attenuation/20).
    """
    beta_list = np.asarray(beta_list, dtype=float)
    if np.any(np.diff(beta_list) <= 0):
        raise ValueError("beta_list must be increasing")
    scale = 10.0 ** (-attenuation_db / 20.0)
    t1 = np.full(len(beta_list), np.nan)
    flags = []
    for k, b in enumerate(beta_list):
        pulse = PulseContext(beta=b * scale, dt=dt)
        try:
            t1[k] = fit_recovery(grid, dist, pulse)
        except (FitError, ValueError) as exc:
            log.warning("T1 fit failed at beta=%g: %s", b, exc)
            flags.append(k)
    return beta_list, t1, flags


def selected_g0_scale(grid: RelaxGrid, dt: float) -> float:
    """beta * g0_selected: pi kappa / (4 dt sqrt(kappa_c))."""
    return math.pi * grid.kappa / (4.0 * dt * math.sqrt(grid.resonator.kappa_c))


def default_betas(grid: RelaxGrid, dt: float = 1e-6, n: int = 25) -> np.ndarray:
    """Sweep whose selected coupling runs from twice the grid maximum down to
    five times the grid minimum; below that the echo comes from over-rotated
    spins only and the recovery is no longer meaningful."""
    scale = selected_g0_scale(grid, dt)
    return np.geomspace(scale / (2.0 * grid.g0_values[-1]), scale / (5.0 * grid.g0_values[0]), n)


def outside_grid(grid: RelaxGrid, beta, dt: float = 1e-6, attenuation_db: float = 0.0) -> list:
    """Indices of beta values whose selected coupling lies outside the g0 grid."""
    sel = selected_g0_scale(grid, dt) / (np.asarray(beta, dtype=float) * 10.0 ** (-attenuation_db / 20.0))
    return np.flatnonzero((sel < grid.g0_values[0]) | (sel > grid.g0_values[-1])).tolist()
