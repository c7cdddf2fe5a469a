import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erspin import analytic as an
from erspin.hamiltonian import FieldConfig, GTensor

MU_B = 9.2740100783e-24
HBAR = 1.054571817e-34
KB = 1.380649e-23
TWO_PI = 2 * math.pi
G = GTensor()
F = FieldConfig(0.0672, 47.0)
STARK = an.StarkModel()


# --------------------------------------------------------------------------
# Stark


def test_stark_minimum_at_phi0():
    assert an.stark_linewidth(STARK, FieldConfig(0.0672, 31.0), G) == 1e6


def test_stark_47_degrees_oracle():
    extra = 11e-6 * math.sin(math.radians(32.0)) / (2 * 8.38) * MU_B / HBAR * 0.0672 * 32e3 / TWO_PI
    gamma = an.stark_linewidth(STARK, F, G)
    assert gamma - 1e6 == pytest.approx(extra, rel=1e-8)
    assert gamma - 1e6 == pytest.approx(10.5e6, rel=0.05)


def test_stark_without_field_spread():
    model = an.StarkModel(delta_Ec=0.0)
    phi = np.linspace(0, 180, 37)
    np.testing.assert_array_equal(an.stark_linewidth(model, F, G, phi), 1e6)


@given(st.floats(0, 360))
def test_stark_period_and_zeros(phi):
    a = an.stark_linewidth(STARK, F, G, phi)
    assert a == pytest.approx(an.stark_linewidth(STARK, F, G, phi + 180.0), rel=1e-9)
    assert an.stark_sensitivity(STARK, F, G, 121.0) == pytest.approx(0.0, abs=1e-6)


def test_stark_fit_round_trips():
    phi = np.linspace(0, 175, 36)
    clean = an.stark_linewidth(STARK, F, G, phi)
    fit = an.fit_delta_Ec(phi, clean, F, G)
    assert fit.delta_Ec == pytest.approx(32e3, rel=1e-9)
    assert fit.gamma_min == pytest.approx(1e6, rel=1e-9)
    assert fit.phi0 == pytest.approx(31.0, abs=1e-7)
    noisy = clean * (1 + 0.02 * np.random.default_rng(1).standard_normal(len(phi)))
    assert an.fit_delta_Ec(phi, noisy, F, G).delta_Ec == pytest.approx(32e3, rel=0.05)


def test_stark_fit_degenerate_sampling():
    with pytest.raises(an.IllConditionedFitError):
        an.fit_delta_Ec([31.0] * 6, [1e6] * 6, F, G)


# --------------------------------------------------------------------------
# instantaneous diffusion


def _id(gamma_mhz, bw_khz, er_total=0.7e13 / 0.77):
    line = an.SpinLine(Gamma=TWO_PI * gamma_mhz * 1e6, rho=an.zero_spin_density(er_total))
    return an.instantaneous_diffusion_T2(line, TWO_PI * bw_khz * 1e3, 8.38)


@pytest.mark.parametrize("gamma,bw,expected", [(10, 250, 0.400), (11, 580, 0.190), (1.8, 580, 0.031)])
def test_id_operating_points(gamma, bw, expected):
    assert _id(gamma, bw) == pytest.approx(expected, rel=0.10)


def test_id_formula_oracle():
    rho = 0.7e19
    rate = 2.5 * 1e-7 * (8.38 * MU_B) ** 2 / HBAR * rho * 250e3 / 10e6
    assert _id(10, 250) == pytest.approx(1 / rate, rel=1e-8)


def test_id_no_spins_is_infinite():
    line = an.SpinLine(rho=0.0)
    assert an.instantaneous_diffusion_T2(line, TWO_PI * 250e3, 8.38) == math.inf


@given(st.floats(1e17, 1e21), st.floats(0.3, math.pi))
def test_id_homogeneous_in_density(rho, theta):
    a = an.instantaneous_diffusion_T2(an.SpinLine(rho=rho), TWO_PI * 250e3, 8.38, theta)
    b = an.instantaneous_diffusion_T2(an.SpinLine(rho=2 * rho), TWO_PI * 250e3, 8.38, theta)
    assert b == pytest.approx(a / 2, rel=1e-12)


def test_pulse_bandwidth_convention():
    assert an.pulse_bandwidth(4e-6) / TWO_PI == pytest.approx(250e3)
    assert an.pulse_bandwidth(1e-6) / TWO_PI == pytest.approx(1e6)
    assert an.excitation_bandwidth(TWO_PI * 580e3, 1e-6) == pytest.approx(TWO_PI * 580e3)


def test_id_warns_outside_line():
    with pytest.warns(UserWarning):
        an.instantaneous_diffusion_T2(an.SpinLine(Gamma=TWO_PI * 1e5), TWO_PI * 1e6, 8.38)


# --------------------------------------------------------------------------
# resonator response

RES = an.ResonatorParams.from_quality(*an.RESONATORS[3])
LINE = an.SpinLine(omega_s=RES.omega0, Gamma=TWO_PI * 10e6)


def test_critical_coupling_absorbs_everything():
    res = an.ResonatorParams(TWO_PI * 7e9, 1e6, 1e6)
    assert abs(an.reflection_coefficient(res, LINE, 0.0, res.omega0)) < 1e-15


def test_far_detuned_limit():
    # with the -1 convention, r tends to -1 (full reflection) far from resonance
    r = an.reflection_coefficient(RES, LINE, 0.0, RES.omega0 + np.array([-1e13, 1e13]))
    np.testing.assert_allclose(r, -1.0, atol=1e-6)
    assert np.all(np.abs(r + 1) < 1e-6)


def test_broadened_loss_half_width():
    g = TWO_PI * 140e3
    peak = an.broadened_internal_loss(RES, LINE, g, LINE.omega_s) - RES.kappa_int
    for s in (-1, 1):
        side = an.broadened_internal_loss(RES, LINE, g, LINE.omega_s + s * LINE.Gamma / 2) - RES.kappa_int
        assert side == pytest.approx(peak / 2, rel=1e-12)


@given(kc=st.floats(1e3, 1e7), ki=st.floats(1e3, 1e7), g=st.floats(0, 1e7),
       gam=st.floats(1e4, 1e8), det=st.floats(-1e8, 1e8), ws=st.floats(-1e7, 1e7))
def test_passive_reflection_bounded(kc, ki, g, gam, det, ws):
    res = an.ResonatorParams(1e10, kc, ki)
    line = an.SpinLine(omega_s=1e10 + ws, Gamma=gam)
    assert abs(an.reflection_coefficient(res, line, g, 1e10 + det)) <= 1 + 1e-9


def test_resonator_presets():
    assert an.ResonatorParams.from_quality(*an.RESONATORS[1]).kappa / TWO_PI == pytest.approx(184.2e3, rel=1e-3)
    assert RES.kappa / TWO_PI == pytest.approx(350.6e3, rel=1e-3)
    with pytest.raises(ValueError):
        an.ResonatorParams(1.0, 0.0, 1.0)


# --------------------------------------------------------------------------
# couplings


def _uniform_map(by=1e-12, bz=0.0):
    y = np.linspace(0, 10, 11)
    z = np.linspace(0, 4, 5)
    shape = (len(y), len(z))
    return an.B1Map(y, z, np.zeros(shape), np.full(shape, by), np.full(shape, bz), length_um=100.0)


def test_uniform_field_coupling():
    b1 = _uniform_map()
    rho = 1e19
    volume = 10e-6 * 4e-6 * 100e-6
    expected = MU_B / (2 * HBAR) * 8.38 * 1e-12 * math.sqrt(rho * volume)
    assert an.ensemble_coupling(b1, rho, G, delta_phi=0.0) == pytest.approx(expected, rel=1e-8)
    assert an.ensemble_coupling(b1, 0.0, G) == 0.0


def test_concentration_inversion_round_trip():
    b1 = an.wire_b1map(RES.omega0, width_um=5.0)
    g = an.ensemble_coupling(b1, 0.7e19, G)
    assert an.concentration_from_coupling(b1, g, G) == pytest.approx(0.7e19, rel=1e-12)


def test_concentration_from_paper_coupling():
    b1 = an.wire_b1map(RES.omega0, width_um=5.0)
    rho = an.concentration_from_coupling(b1, TWO_PI * 140e3, G) * 1e-6
    assert rho == pytest.approx(0.7e13, rel=0.30)


def test_b1map_csv_round_trip(tmp_path):
    b1 = an.wire_b1map(RES.omega0, width_um=2.0, y_um=np.linspace(-20, 20, 9), z_um=np.linspace(-10, -1, 4))
    b1.to_csv(tmp_path / "m.csv")
    back = an.read_b1map(tmp_path / "m.csv", length_um=b1.length_um)
    np.testing.assert_allclose(back.b1y, b1.b1y, rtol=1e-7)
    assert an.coupling_integral(back, G, 21.0) == pytest.approx(an.coupling_integral(b1, G, 21.0), rel=1e-6)


def test_b1map_missing_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y_um,z_um,B1y\n0,0,1\n")
    with pytest.raises(ValueError):
        an.read_b1map(p)


def test_thin_wire_field():
    b1 = an.wire_b1map(RES.omega0, width_um=0.0, y_um=np.array([0.0]), z_um=np.array([-3.0]))
    i = an.vacuum_current(RES.omega0, 40.0)
    assert abs(b1.b1y[0, 0]) == pytest.approx(2e-7 * i / 3e-6, rel=1e-6)


# --------------------------------------------------------------------------
# pulses


def test_rabi_selection_consistency():
    pulse = an.PulseContext(beta=1e7, dt=1e-6)
    rabi, sel = an.rabi_and_selection(RES, pulse)
    assert rabi * pulse.dt == pytest.approx(math.pi, rel=1e-12)
    _, sel2 = an.rabi_and_selection(RES, an.PulseContext(beta=2e7, dt=1e-6))
    assert sel2 == pytest.approx(sel / 2, rel=1e-12)


def test_selection_without_internal_loss():
    kc = 1e6
    res = an.ResonatorParams(1e10, kc, 1e-9)
    pulse = an.PulseContext(beta=3e6, dt=2e-6)
    assert an.selected_coupling(res, pulse) == pytest.approx(math.pi * math.sqrt(kc) / (4 * 2e-6 * 3e6), rel=1e-9)


def test_beta_from_power():
    assert an.beta_from_power(1e-12, 1e10) == pytest.approx(math.sqrt(1e-12 / (HBAR * 1e10)), rel=1e-8)


# --------------------------------------------------------------------------
# spin-lattice relaxation

W0 = TWO_PI * 7.881e9


def test_phonon_limits():
    assert an.direct_phonon_T1(4.8, W0, 0.0) == 4.8
    assert an.direct_phonon_T1(4.8, W0, 0.010) / 4.8 > 0.999999
    t_star = HBAR * W0 / (2 * KB)
    assert an.direct_phonon_T1(4.8, W0, t_star) == pytest.approx(4.8 * math.tanh(1.0), rel=1e-8)


@given(st.lists(st.floats(0.001, 5.0), min_size=2, max_size=10, unique=True))
def test_phonon_monotone(temps):
    t = np.sort(temps)
    assert np.all(np.diff(an.direct_phonon_T1(4.8, W0, t)) <= 0)


def test_phonon_fit_round_trip():
    t = np.linspace(0.01, 0.6, 15)
    y = an.direct_phonon_T1(4.8, W0, t) * (1 + 0.01 * np.random.default_rng(2).standard_normal(15))
    t10, err = an.fit_direct_phonon(t, y, W0)
    assert t10 == pytest.approx(4.8, rel=0.02) and err > 0


def test_omega5_scaling():
    assert an.omega5_scaling(3.0, 1e10, 1e10) == pytest.approx(3.0)
    assert an.omega5_scaling(1.0, 1e10, 2e10) == pytest.approx(32.0)
    assert an.omega5_scaling(1.0, 7.025, 7.881) == pytest.approx(1.776, rel=2e-3)


def test_anisotropy_model():
    phi = np.linspace(0, 90, 7)
    np.testing.assert_allclose(an.t1_anisotropy(0.5, 0.0, 92.0, phi), 2.0)
    np.testing.assert_allclose(an.t1_anisotropy(0.5, 0.2, 92.0, phi), an.t1_anisotropy(0.5, 0.2, 92.0, phi + 90.0))
    with pytest.raises(ValueError):
        an.t1_anisotropy(0.1, 0.2, 0.0, phi)


def test_anisotropy_fit_recovers_phase():
    phi = np.arange(0, 180, 7.5)
    rng = np.random.default_rng(3)
    t1 = an.t1_anisotropy(0.4, 0.1, 92.0, phi) * (1 + 0.02 * rng.standard_normal(len(phi)))
    a, b, phi1 = an.fit_t1_anisotropy(phi, t1)
    assert phi1 == pytest.approx(92.0, abs=3.0)
    assert a == pytest.approx(0.4, rel=0.05) and b == pytest.approx(0.1, rel=0.15)
