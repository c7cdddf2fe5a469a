"""Independent reference implementations used by the test suite."""

import numpy as np
from scipy.linalg import expm

from erspin.crystal import BathConfiguration, LatticeSpec, lattice_sites
from erspin.hamiltonian import GTensor, NuclearSpecies, hyperfine_vectors, nuclear_dipolar, secular_hyperfine

_SZ = np.diag([0.5, -0.5])
_SP = np.array([[0.0, 1.0], [0.0, 0.0]])


def _op(o, k, n):
    out = np.ones((1, 1))
    for j in range(n):
        out = np.kron(out, o if j == k else np.eye(2))
    return out


def full_bath_hamiltonians(conf, g, field, species):
    """Dense H(+), H(-) on the whole bath, built operator by operator."""
    n = len(conf)
    pos = conf.positions
    a = secular_hyperfine(pos, g, field, species)
    h = sum(species.larmor(field) * _op(_SZ, k, n) for k in range(n))
    for i in range(n):
        for j in range(i + 1, n):
            b, bff = nuclear_dipolar(pos[i], pos[j], field, species)
            pi, pj = _op(_SP, i, n), _op(_SP, j, n)
            h = h + b * _op(_SZ, i, n) @ _op(_SZ, j, n) + bff * (pi @ pj.T + pi.T @ pj)
    cond = sum(0.5 * a[k] * _op(_SZ, k, n) for k in range(n))
    return h + cond, h - cond


def expm_echo(h_plus, h_minus, tau):
    """Normalized Hahn-echo trace by explicit matrix exponentials."""
    d = h_plus.shape[0]
    out = []
    for t in np.atleast_1d(tau):
        u = expm(1j * h_minus * t) @ expm(1j * h_plus * t) @ expm(-1j * h_minus * t) @ expm(-1j * h_plus * t)
        out.append(np.trace(u) / d)
    return np.array(out)


def exact_bath_echo(conf, g, field, species, tau):
    return expm_echo(*full_bath_hamiltonians(conf, g, field, species), tau)


_SITES = None


def _sites():
    global _SITES
    if _SITES is None:
        _SITES = lattice_sites(LatticeSpec(), 12.0)
    return _SITES


def _dimer(rng, rmin, rmax):
    sites = _sites()
    r = np.linalg.norm(sites, axis=1)
    i = rng.choice(np.flatnonzero((r >= rmin) & (r <= rmax)))
    d = np.linalg.norm(sites - sites[i], axis=1)
    d[i] = np.inf
    j = rng.choice(np.flatnonzero(d <= d.min() * 1.0001))
    return sites[[i, j]]


def two_dimer_bath(seed, rmin=6.0, rmax=11.0, min_separation=3.0):
    """Four 183W spins: two nearest-neighbour W pairs 6-11 nm from the Er site,
    at least `min_separation` nm apart. Flip-flops within each pair drive the decay."""
    rng = np.random.default_rng(seed)
    a = _dimer(rng, rmin, rmax)
    while True:
        b = _dimer(rng, rmin, rmax)
        if np.min(np.linalg.norm(a[:, None] - b[None], axis=-1)) >= min_separation:
            return BathConfiguration(np.vstack([a, b]))


def patch_bath(seed, rmin=8.0, rmax=11.0, patch=0.8):
    """Four W sites drawn from a small patch of the lattice 8-11 nm from the Er site."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=3)
    centre = d / np.linalg.norm(d) * rng.uniform(rmin, rmax)
    sites = _sites()
    near = sites[np.linalg.norm(sites - centre, axis=1) <= patch]
    return BathConfiguration(near[rng.choice(len(near), 4, replace=False)])


_S = [np.array([[0, 0.5], [0.5, 0]]), np.array([[0, -0.5j], [0.5j, 0]]), np.diag([0.5, -0.5])]


def propagator_echo(position, field, tau, g=None, species=None):
    """Two-pulse echo of one S=1/2, I=1/2 pair from explicit 4x4 time evolution
    with ideal pulses; nuclear operators in the crystal frame."""
    g = g or GTensor()
    species = species or NuclearSpecies()
    a = hyperfine_vectors(np.atleast_2d(position), g, field, species)[0]
    d = field.direction
    e2 = np.eye(2)
    s = [np.kron(o, e2) for o in _S]
    i_ops = [np.kron(e2, o) for o in _S]
    i_a = sum(ak * op for ak, op in zip(a, i_ops))
    i_d = sum(dk * op for dk, op in zip(d, i_ops))
    h = s[2] @ i_a + species.larmor(field) * i_d
    r90 = expm(-1j * np.pi / 2 * s[0])
    r180 = expm(-1j * np.pi * s[0])
    rho = r90 @ s[2] @ r90.conj().T
    s_plus = s[0] + 1j * s[1]
    out = []
    for t in np.atleast_1d(tau):
        u = expm(-1j * h * t)
        m = u @ r180 @ u
        out.append(np.trace(m @ rho @ m.conj().T @ s_plus))
    ref = np.trace(r180 @ rho @ r180.conj().T @ s_plus)
    return (np.array(out) / ref).real
