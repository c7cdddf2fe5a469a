import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import propagator_echo
from erspin.eseem import (
    EseemParams,
    apply_bandwidth_filter,
    default_nuclei,
    default_tau,
    eseem_trace,
    filter_cutoff,
    nuclear_frequencies,
    spectrum,
)
from erspin.hamiltonian import FieldConfig, GTensor, NuclearSpecies, hyperfine_vectors

FIELD = FieldConfig(0.0672, 31.0)
G, SP = GTensor(), NuclearSpecies()

def _params(pos, **kw):
    return EseemParams(np.atleast_2d(pos), field=kw.pop("field", FIELD), **kw)


def test_single_nucleus_trace_matches_propagator():
    pos = np.array([0.31, 0.42, 0.25])
    tau = default_tau(1e-6, 60e-6)
    np.testing.assert_allclose(eseem_trace(_params(pos), tau), propagator_echo(pos, FIELD, tau), atol=1e-10)


def test_spectrum_peaks_match_propagator():
    pos = np.array([0.31, 0.42, 0.25])
    dt = 0.1e-6
    tau = default_tau(dt, 300e-6)
    f_mod, a_mod = spectrum(eseem_trace(_params(pos), tau), dt)
    f_ref, a_ref = spectrum(propagator_echo(pos, FIELD, tau), dt)
    df = f_mod[1] - f_mod[0]
    peaks_mod = f_mod[np.argsort(a_mod)[-3:]]
    peaks_ref = f_ref[np.argsort(a_ref)[-3:]]
    assert np.all(np.abs(np.sort(peaks_mod) - np.sort(peaks_ref)) <= df)
    # every peak sits at a combination of the two branch frequencies
    wa, wb = (w[0] / (2 * np.pi) for w in nuclear_frequencies(_params(pos)))
    lines = np.array([wa, wb, abs(wa - wb), wa + wb])
    for f in peaks_mod:
        assert np.min(np.abs(lines - f)) <= df


@pytest.mark.parametrize("direction", ["perpendicular", "parallel", "c_axis"])
def test_no_branching_gives_flat_trace(direction):
    d = FIELD.direction
    pos = {
        "perpendicular": 0.6 * np.array([-d[1], d[0], 0.0]),
        "parallel": 0.6 * d,
        "c_axis": np.array([0.0, 0.0, 0.6]),
    }[direction]
    tau = default_tau(1e-6, 100e-6)
    np.testing.assert_allclose(eseem_trace(_params(pos), tau), 1.0, atol=1e-12)


def test_far_nucleus_has_no_modulation():
    tau = default_tau(1e-6, 300e-6)
    depth = [1 - eseem_trace(_params(np.array([0.3, 0.4, 0.25]) * s), tau).min() for s in (1, 3, 10, 30)]
    assert all(b < a for a, b in zip(depth, depth[1:]))
    assert depth[-1] < 1e-6


def test_trace_bounded_for_default_shell():
    tau = default_tau(1e-6, 300e-6)
    v = eseem_trace(EseemParams(default_nuclei()), tau)
    assert np.all(np.abs(v) <= 1 + 1e-12)
    assert len(default_nuclei()) > 0
    assert np.all(np.linalg.norm(default_nuclei(), axis=1) <= 1.0)


def test_ensemble_average_limits():
    tau = default_tau(1e-6, 100e-6)
    nuc = default_nuclei()
    full = eseem_trace(EseemParams(nuc), tau)
    np.testing.assert_allclose(eseem_trace(EseemParams(nuc, abundance=1.0), tau), full)
    np.testing.assert_allclose(eseem_trace(EseemParams(nuc, abundance=0.0), tau), 1.0)


def test_paper_filter_cutoffs():
    assert filter_cutoff(270e3, 250e3) == pytest.approx(125e3)
    assert filter_cutoff(580e3, 1e6) == pytest.approx(290e3)
    with pytest.raises(ValueError):
        filter_cutoff(0.0, 1e6)


def test_constant_trace_unchanged():
    x = np.full(300, 0.73)
    np.testing.assert_allclose(apply_bandwidth_filter(x, 1e-6, 270e3, 250e3), x, atol=1e-14)


@pytest.mark.parametrize("kappa,bw", [(270e3, 250e3), (580e3, 1e6)])
def test_filtered_spectrum_has_no_super_cutoff_content(kappa, bw):
    dt = 0.1e-6
    tau = default_tau(dt, 300e-6)
    trace = eseem_trace(EseemParams(default_nuclei(), abundance=0.145), tau)
    filt = apply_bandwidth_filter(trace, dt, kappa, bw)
    f, a = spectrum(filt, dt)
    assert np.max(a[f > filter_cutoff(kappa, bw)]) <= 0.01 * a.max()
    assert filt.mean() == pytest.approx(trace.mean(), rel=1e-12)


def test_angular_continuity():
    pos = np.array([0.31, 0.42, 0.25])
    phis = np.arange(0.0, 180.0, 1.0)
    f = np.array([[w[0] for w in nuclear_frequencies(_params(pos, field=FieldConfig(0.0672, p)))] for p in phis])
    jumps = np.abs(np.diff(f, axis=0))
    assert jumps.max() < 0.05 * np.abs(f).max()


@given(x=st.floats(-1, 1), y=st.floats(-1, 1), z=st.floats(-1, 1), phi=st.floats(0, 360))
def test_single_nucleus_bounds(x, y, z, phi):
    pos = np.array([x, y, z])
    if np.linalg.norm(pos) < 0.3:
        pos = pos + 0.4
    params = _params(pos, field=FieldConfig(0.0672, phi))
    tau = default_tau(2e-6, 100e-6)
    v = eseem_trace(params, tau)
    # exact two-pulse bound: 1 - 2k <= V <= 1 with k = (omega_I B / (omega_a omega_b))^2
    a = hyperfine_vectors(params.nuclei, G, params.field, SP)[0]
    b_perp = np.linalg.norm(a - (a @ params.field.direction) * params.field.direction)
    wa, wb = (w[0] for w in nuclear_frequencies(params))
    k = (SP.larmor(params.field) * b_perp / (wa * wb)) ** 2
    assert np.all(v <= 1 + 1e-12) and np.all(v >= 1 - 2 * k - 1e-9)


def test_params_validation():
    with pytest.raises(ValueError):
        EseemParams(default_nuclei(), filter_cutoff=0.0)
