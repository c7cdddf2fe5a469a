"""CaWO4 tungsten sublattice and 183W nuclear-spin baths around an Er3+ on a Ca site.

Positions are in nm in the crystal frame (x || a, y || b, z || c), with the
substituted Ca site at the origin. Scheelite I4_1/a, origin choice 2:
W on Wyckoff 4a, Ca on 4b.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .constants import LATTICE_A_NM, LATTICE_C_NM, W183_ABUNDANCE

RNG_NAME = "numpy.random.PCG64"

W_BASIS = ((0.0, 0.25, 0.125), (0.5, 0.75, 0.625), (0.5, 0.25, 0.375), (0.0, 0.75, 0.875))
CA_BASIS = ((0.0, 0.25, 0.625), (0.5, 0.75, 0.125), (0.5, 0.25, 0.875), (0.0, 0.75, 0.375))


@dataclass(frozen=True)
class LatticeSpec:
    a: float = LATTICE_A_NM
    c: float = LATTICE_C_NM
    w_basis: tuple = W_BASIS
    ca_basis: tuple = CA_BASIS

    def __post_init__(self):
        if self.a <= 0 or self.c <= 0:
            raise ValueError("lattice constants must be positive")
        for frac in (*self.w_basis, *self.ca_basis):
            if not all(0.0 <= f < 1.0 for f in frac):
                raise ValueError(f"fractional coordinate out of [0, 1): {frac}")

    @property
    def w_density(self) -> float:
        """W sites per nm^3."""
        return len(self.w_basis) / (self.a * self.a * self.c)

    def cartesian(self, frac) -> np.ndarray:
        return np.asarray(frac, dtype=float) * np.array([self.a, self.a, self.c])

    @property
    def origin(self) -> np.ndarray:
        """Cartesian position of the Ca site hosting the Er ion."""
        return self.cartesian(self.ca_basis[0])


@dataclass(frozen=True)
class BathSpec:
    abundance: float = W183_ABUNDANCE
    radius: float = 11.0
    mode: str = "lattice"
    seed: int = 0
    er_concentration: float = 0.7e13 / 0.77  # total [Er3+], cm^-3

    def __post_init__(self):
        if not 0.0 <= self.abundance <= 1.0:
            raise ValueError("abundance must lie in [0, 1]")
        if self.radius <= 0:
            raise ValueError("bath radius must be positive")
        if self.mode not in ("lattice", "amorphous"):
            raise ValueError(f"unknown bath mode {self.mode!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class BathConfiguration:
    """Nuclear spins around the central spin; positions relative to the central spin."""

    positions: np.ndarray
    species: list = field(default_factory=list)
    central_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if not self.species:
            self.species = ["183W"] * len(self.positions)

    def __len__(self):
        return len(self.positions)

    def to_dict(self) -> dict:
        return {
            "central_position_nm": self.central_position.tolist(),
            "positions_nm": self.positions.tolist(),
            "species": list(self.species),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BathConfiguration":
        return cls(
            positions=np.asarray(d["positions_nm"], dtype=float).reshape(-1, 3),
            species=list(d.get("species", [])),
            central_position=np.asarray(d.get("central_position_nm", [0, 0, 0]), dtype=float),
            metadata=dict(d.get("metadata", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "BathConfiguration":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.positions).tobytes()).hexdigest()[:16]


def lattice_sites(spec: LatticeSpec, radius: float, basis=None) -> np.ndarray:
    """All sites of `basis` (default: W) within `radius` of the Er/Ca origin.

    Returned relative to the origin, in a fixed enumeration order
    (cell index lexicographic, then basis index).
    """
    basis = spec.w_basis if basis is None else basis
    origin = spec.origin
    na = int(np.ceil(radius / spec.a)) + 1
    nc = int(np.ceil(radius / spec.c)) + 1
    ia = np.arange(-na, na + 1)
    ic = np.arange(-nc, nc + 1)
    cells = np.stack(np.meshgrid(ia, ia, ic, indexing="ij"), axis=-1).reshape(-1, 3)
    frac = np.asarray(basis, dtype=float)
    pts = (cells[:, None, :] + frac[None, :, :]).reshape(-1, 3)
    cart = pts * np.array([spec.a, spec.a, spec.c]) - origin
    r = np.linalg.norm(cart, axis=1)
    keep = (r <= radius) & (r > 1e-9)
    return cart[keep]


def nearest_ca_w_distance(spec: LatticeSpec) -> float:
    sites = lattice_sites(spec, 2.0 * max(spec.a, spec.c))
    return float(np.min(np.linalg.norm(sites, axis=1)))


def _metadata(spec: LatticeSpec, bath: BathSpec, **extra) -> dict:
    md = {
        "rng": RNG_NAME,
        "seed": int(bath.seed),
        "lattice": {"a_nm": spec.a, "c_nm": spec.c},
        "bath": {"abundance": bath.abundance, "radius_nm": bath.radius, "mode": bath.mode},
    }
    md.update(extra)
    return md


def build_lattice_bath(spec: LatticeSpec, bath: BathSpec) -> BathConfiguration:
    """Occupy each W site within the bath radius with probability `abundance`."""
    if bath.mode != "lattice":
        raise ValueError("build_lattice_bath requires mode='lattice'")
    sites = lattice_sites(spec, bath.radius)
    rng = np.random.Generator(np.random.PCG64(int(bath.seed)))
    occupied = rng.random(len(sites)) < bath.abundance
    return BathConfiguration(
        positions=sites[occupied],
        metadata=_metadata(spec, bath, n_sites=int(len(sites))),
    )


def amorphous_mean_count(spec: LatticeSpec, bath: BathSpec) -> float:
    return bath.abundance * spec.w_density * 4.0 / 3.0 * np.pi * bath.radius**3


def build_amorphous_bath(spec: LatticeSpec, bath: BathSpec) -> BathConfiguration:
    """Poisson number of spins at the lattice-matched density, uniform in a spherical shell.

    The inner (hard-core) radius equals the nearest Ca-W distance of the lattice.
    """
    if bath.mode != "amorphous":
        raise ValueError("build_amorphous_bath requires mode='amorphous'")
    core = nearest_ca_w_distance(spec)
    rng = np.random.Generator(np.random.PCG64(int(bath.seed)))
    n = int(rng.poisson(amorphous_mean_count(spec, bath)))
    if bath.radius <= core:
        n = 0
    u = rng.random(n)
    r = np.cbrt(core**3 + u * (bath.radius**3 - core**3))
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return BathConfiguration(
        positions=v * r[:, None],
        metadata=_metadata(spec, bath, hard_core_nm=core),
    )


def build_bath(spec: LatticeSpec, bath: BathSpec) -> BathConfiguration:
    if bath.mode == "lattice":
        return build_lattice_bath(spec, bath)
    return build_amorphous_bath(spec, bath)


def spec_echo(spec: LatticeSpec, bath: BathSpec) -> dict:
    d = asdict(bath)
    d.update({"a_nm": spec.a, "c_nm": spec.c})
    return d
