"""Polar-domain sampling lattice and per-subcarrier projection matrices.

Columns are flattened ring-major: index ``f = s * n_angles + n`` so the
first ``n_angles`` columns form the far-field ring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import steering_matrix
from .config import SystemConfig

VARIANTS = ("fd", "flat", "dft")

# below this many bytes the full Phi stack is kept in memory
CACHE_BUDGET_BYTES = 512 * 2 ** 20


def fresnel_distance(r: float, theta: float, delta: float, d: float) -> float:
    """Second-order expansion of the element distance.

    Args:
        r: distance from the array centre in meters.
        theta: angle in radians.
        delta: signed element index offset (``(2n - N - 1) / 2``).
        d: element spacing in meters.
    """
    if not r > 0:
        raise ValueError("fresnel_distance needs r > 0")
    x = delta * d
    return r - x * math.sin(theta) + x * x * math.cos(theta) ** 2 / (2 * r)


@dataclass
class PolarLattice:
    """Joint angle / inverse-distance grid.

    Attributes:
        sin_theta: ``(n_angles,)`` grid of ``sin(theta)``.
        inv_r: ``(S, n_angles)`` inverse distances; ring 0 is all zeros.
        rayleigh_distance: ``2 D^2 / lambda_c`` in meters.
        eta: density scale that produced ``inv_r``.
    """

    sin_theta: np.ndarray
    inv_r: np.ndarray
    rayleigh_distance: float
    eta: float

    @property
    def n_angles(self) -> int:
        return len(self.sin_theta)

    @property
    def n_rings(self) -> int:
        return self.inv_r.shape[0]

    @property
    def size(self) -> int:
        return self.n_angles * self.n_rings

    def index(self, n: int, s: int) -> int:
        return s * self.n_angles + n

    def unravel(self, f):
        """Flat index -> ``(angle index, ring index)``."""
        s, n = np.divmod(np.asarray(f), self.n_angles)
        return n, s

    @property
    def flat_sin(self) -> np.ndarray:
        return np.tile(self.sin_theta, self.n_rings)

    @property
    def flat_inv_r(self) -> np.ndarray:
        return self.inv_r.reshape(-1)

    def polar(self, f):
        """Flat index -> ``(theta, r)``; ``r`` is ``inf`` on the far-field ring."""
        n, s = self.unravel(f)
        th = np.arcsin(self.sin_theta[n])
        u = self.inv_r[s, n]
        with np.errstate(divide="ignore"):
            r = np.where(u > 0, 1.0 / np.where(u > 0, u, 1.0), np.inf)
        return th, r

    def ring_distances(self, n: int) -> np.ndarray:
        """Distances of every ring at angle index ``n`` (ring 0 is ``inf``)."""
        u = self.inv_r[:, n]
        with np.errstate(divide="ignore"):
            return np.where(u > 0, 1.0 / np.where(u > 0, u, 1.0), np.inf)


def build_lattice(cfg: SystemConfig, rho: int | None = None, s_rings: int | None = None
                  ) -> PolarLattice:
    """Grid with ``rho * N_BS`` angles and ``S`` rings per angle.

    ``cos^2`` is clamped at 1e-6 so the end-fire angles stay finite.
    """
    rho = cfg.rho if rho is None else rho
    s_rings = cfg.s_rings if s_rings is None else s_rings
    n_ang = rho * cfg.n_bs
    n = np.arange(n_ang)
    sin_t = (2 * n - n_ang + 1) / n_ang
    cos2 = np.maximum(1 - sin_t ** 2, 1e-6)
    rr = cfg.rayleigh_distance
    s = np.arange(s_rings)[:, None]
    inv_r = s * cfg.eta / (4 * rr * cos2[None, :])
    return PolarLattice(sin_t, np.ascontiguousarray(inv_r), rr, cfg.eta)


def dft_lattice(cfg: SystemConfig) -> PolarLattice:
    """Far-field ring only, one angle per antenna."""
    return build_lattice(cfg, rho=1, s_rings=1)


def build_projection(lattice: PolarLattice, wavelength: float, cfg: SystemConfig) -> np.ndarray:
    """``N_BS x |lattice|`` matrix of steering columns at one wavelength."""
    return steering_matrix(lattice.flat_sin, lattice.flat_inv_r, cfg.n_bs, cfg.spacing, wavelength)


@dataclass
class PolarDictionary:
    """Projection matrices ``Phi[m]`` for every subcarrier.

    Attributes:
        lattice: grid the columns are sampled on.
        variant: ``"fd"`` (per-subcarrier wavelength), ``"flat"`` (carrier
            wavelength for all m) or ``"dft"`` (far-field ring, one angle per
            antenna, carrier wavelength).
        wavelengths: wavelength used for each subcarrier's matrix.
    """

    lattice: PolarLattice
    variant: str
    wavelengths: np.ndarray
    n_bs: int
    spacing: float
    _cache: dict = field(default_factory=dict, repr=False)
    cache_all: bool = True

    @property
    def n_columns(self) -> int:
        return self.lattice.size

    @property
    def m_subcarriers(self) -> int:
        return len(self.wavelengths)

    def matrix(self, m: int) -> np.ndarray:
        lam = float(self.wavelengths[m])
        phi = self._cache.get(lam)
        if phi is None:
            phi = steering_matrix(self.lattice.flat_sin, self.lattice.flat_inv_r, self.n_bs,
                                  self.spacing, lam)
            if self.cache_all:
                self._cache[lam] = phi
        return phi

    def __getitem__(self, m: int) -> np.ndarray:
        return self.matrix(m)


def build_dictionary(cfg: SystemConfig, variant: str = "fd",
                     lattice: PolarLattice | None = None) -> PolarDictionary:
    """Dictionary of the requested variant for every subcarrier of ``cfg``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown dictionary variant {variant!r}; choose from {VARIANTS}")
    if variant == "dft":
        lattice = dft_lattice(cfg)
    elif lattice is None:
        lattice = build_lattice(cfg)
    if variant == "fd":
        lams = cfg.wavelengths
    else:
        lams = np.full(cfg.m_subcarriers, cfg.wavelength_c)
    n_distinct = len(np.unique(lams))
    nbytes = 16 * cfg.n_bs * lattice.size * n_distinct
    return PolarDictionary(lattice, variant, lams, cfg.n_bs, cfg.spacing,
                           cache_all=nbytes <= CACHE_BUDGET_BYTES)
