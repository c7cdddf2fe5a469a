"""Secular pure-dephasing Hamiltonians of 183W clusters, conditioned on the Er spin state.

All coefficients are angular frequencies (rad/s); positions are in nm.
The quantization axis z is along B0, which lies in the crystal ab plane.

Sign conventions follow the dipolar tensors as written for the model Hamiltonian:
the secular hyperfine of a nucleus at r is

    A = (mu0/4pi) mu_B gamma_n [z.g.z / r^3 - 3 (z.g.r)(r.z) / r^5]

and the secular homonuclear coupling is b [Iz Iz - 1/4 (I+ I- + I- I+)] with
b = (mu0/4pi) gamma_n^2 hbar (1 - 3 cos^2 theta) / r^3.
The +-omega/2 electron Zeeman offset of H(+-) is dropped: it is a c-number
that cancels exactly in the Hahn-echo trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .constants import CONST, G_PAR, G_PERP, MU0_4PI, W183_GAMMA_MHZ_PER_T

NM = 1e-9
MAX_CLUSTER_SIZE = 3


class UnsupportedOrderError(ValueError):
    pass


@dataclass(frozen=True)
class GTensor:
    g_perp: float = G_PERP
    g_par: float = G_PAR

    def __post_init__(self):
        if self.g_perp <= 0 or self.g_par <= 0:
            raise ValueError("g-tensor components must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.diag([self.g_perp, self.g_perp, self.g_par])


@dataclass(frozen=True)
class FieldConfig:
    B0: float = 0.067  # T
    phi: float = 46.5  # degrees from the a axis, in the ab plane

    def __post_init__(self):
        if self.B0 < 0:
            raise ValueError("B0 must be non-negative")
        object.__setattr__(self, "phi", float(self.phi) % 360.0)

    @property
    def direction(self) -> np.ndarray:
        p = np.deg2rad(self.phi)
        return np.array([np.cos(p), np.sin(p), 0.0])


@dataclass(frozen=True)
class NuclearSpecies:
    gamma_mhz_per_t: float = W183_GAMMA_MHZ_PER_T
    spin: float = 0.5
    name: str = "183W"

    def __post_init__(self):
        if self.spin != 0.5:
            raise ValueError("only spin-1/2 nuclei are modelled")

    @property
    def gamma(self) -> float:
        """Gyromagnetic ratio in rad/s/T."""
        return 2.0 * np.pi * self.gamma_mhz_per_t * 1e6

    def larmor(self, field: FieldConfig) -> float:
        return self.gamma * field.B0


def effective_g(g: GTensor, field: FieldConfig) -> float:
    """|g . z| for the field direction; g_perp for any in-plane field."""
    return float(np.linalg.norm(g.matrix @ field.direction))


def electron_larmor(g: GTensor, field: FieldConfig) -> float:
    """Er transition angular frequency (rad/s)."""
    return effective_g(g, field) * CONST.mu_B * field.B0 / CONST.hbar


def hyperfine_vectors(positions, g: GTensor, field: FieldConfig, species: NuclearSpecies) -> np.ndarray:
    """Rows z.A_i (rad/s) for nuclei at `positions` (nm, shape (N, 3)).

    Component along z is the secular hyperfine; the transverse part drives ESEEM.
    """
    r = np.atleast_2d(np.asarray(positions, dtype=float)) * NM
    rn = np.linalg.norm(r, axis=1)
    if np.any(rn == 0):
        raise ValueError("nucleus coincident with the electron spin")
    z = field.direction
    zg = g.matrix @ z
    pref = MU0_4PI * CONST.mu_B * species.gamma
    proj = r @ zg
    return pref * (zg[None, :] / rn[:, None] ** 3 - 3.0 * proj[:, None] * r / rn[:, None] ** 5)


def secular_hyperfine(positions, g: GTensor, field: FieldConfig, species: NuclearSpecies):
    """z.A.z in rad/s; scalar for a single 3-vector, array for (N, 3)."""
    single = np.ndim(positions) == 1
    a = hyperfine_vectors(positions, g, field, species) @ field.direction
    return float(a[0]) if single else a


def nuclear_dipolar(r_i, r_j, field: FieldConfig, species: NuclearSpecies):
    """Secular homonuclear coefficients (b, b_ff) in rad/s.

    b multiplies Iz_i Iz_j and b_ff = -b/4 multiplies (I+_i I-_j + I-_i I+_j).
    Works elementwise on (N, 3) arrays.
    """
    d = (np.asarray(r_j, dtype=float) - np.asarray(r_i, dtype=float)) * NM
    rn = np.linalg.norm(d, axis=-1)
    if np.any(rn == 0):
        raise ValueError("coincident nuclear positions")
    cos = (d @ field.direction) / rn
    b = MU0_4PI * species.gamma**2 * CONST.hbar * (1.0 - 3.0 * cos**2) / rn**3
    return b, -0.25 * b


@lru_cache(maxsize=None)
def spin_operators(m: int):
    """(Iz list, flip-flop dict keyed by (k, l)) as real 2^m x 2^m matrices."""
    iz = np.diag([0.5, -0.5])
    ip = np.array([[0.0, 1.0], [0.0, 0.0]])
    eye = np.eye(2)

    def embed(op, k):
        out = np.ones((1, 1))
        for j in range(m):
            out = np.kron(out, op if j == k else eye)
        return out

    izs = [embed(iz, k) for k in range(m)]
    ff = {}
    for k, l in combinations(range(m), 2):
        pk, pl = embed(ip, k), embed(ip, l)
        ff[(k, l)] = pk @ pl.T + pk.T @ pl
    return izs, ff


def cluster_hamiltonians(hyperfine, b_zz, omega_n: float = 0.0):
    """Batched H(+) and H(-) for clusters of equal size m.

    hyperfine: (C, m) secular hyperfine; b_zz: (C, m(m-1)/2) pair couplings
    in `itertools.combinations(range(m), 2)` order. Returns two (C, d, d) arrays.
    """
    hyperfine = np.atleast_2d(np.asarray(hyperfine, dtype=float))
    c, m = hyperfine.shape
    d = 2**m
    izs, ff = spin_operators(m)
    bath = np.zeros((c, d, d))
    if m:
        zsum = sum(izs)
        bath += omega_n * zsum[None]
        b_zz = np.asarray(b_zz, dtype=float).reshape(c, -1)
        for p, (k, l) in enumerate(combinations(range(m), 2)):
            pair_op = izs[k] @ izs[l] - 0.25 * ff[(k, l)]
            bath += b_zz[:, p, None, None] * pair_op[None]
    cond = np.zeros((c, d, d))
    for k in range(m):
        cond += 0.5 * hyperfine[:, k, None, None] * izs[k][None]
    return bath + cond, bath - cond


def conditional_hamiltonians(
    cluster,
    config,
    g: GTensor,
    field: FieldConfig,
    species: NuclearSpecies,
    max_order: int = MAX_CLUSTER_SIZE,
):
    """Dense (H_plus, H_minus) for one cluster of bath-spin indices."""
    cluster = list(cluster)
    if len(cluster) > max_order:
        raise UnsupportedOrderError(f"cluster size {len(cluster)} exceeds supported order {max_order}")
    pos = config.positions[cluster] if cluster else np.zeros((0, 3))
    a = secular_hyperfine(pos, g, field, species) if cluster else np.zeros(0)
    pairs = list(combinations(range(len(cluster)), 2))
    if pairs:
        i, j = np.array(pairs).T
        b, _ = nuclear_dipolar(pos[i], pos[j], field, species)
    else:
        b = np.zeros(0)
    hp, hm = cluster_hamiltonians(a[None, :], b[None, :], species.larmor(field))
    return hp[0], hm[0]
