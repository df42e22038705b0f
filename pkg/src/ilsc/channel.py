"""Spherical-wavefront wideband channel synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import SystemConfig
from .scenario import ScenarioGeometry, to_polar, ut_element_positions, ut_side_angle


def element_offsets(n_ant: int, spacing: float) -> np.ndarray:
    """Signed element positions ``delta_n * d`` along the array axis, centred on 0."""
    delta = (2 * np.arange(1, n_ant + 1) - n_ant - 1) / 2
    return np.ascontiguousarray(delta * spacing, dtype=float)


def steering_matrix(sin_theta, inv_r, n_ant: int, spacing: float, wavelength: float) -> np.ndarray:
    """Columns ``a(theta_k, r_k)`` for parallel arrays of ``sin(theta)`` and ``1/r``.

    ``inv_r = 0`` gives the far-field vector exactly; the phase uses the
    exact element distance, rearranged so no cancellation occurs when
    ``r`` is large.
    """
    s = np.ascontiguousarray(np.atleast_1d(sin_theta), dtype=float)
    u = np.ascontiguousarray(np.broadcast_to(np.atleast_1d(inv_r), s.shape), dtype=float)
    return kernels.steering_matrix(s, u, element_offsets(n_ant, spacing), float(wavelength))


def steering_vector(side: str, theta: float, r: float, wavelength: float, n_ant: int,
                    spacing: float) -> np.ndarray:
    """Unit-norm array response toward polar point ``(theta, r)``.

    Args:
        side: ``"BS"`` or ``"UT"``; both arrays use the same centred ULA
            law, the tag only documents intent.
        theta: angle from broadside in radians.
        r: distance in meters, or ``math.inf`` for a plane wave.
        wavelength: wavelength of the subcarrier in meters.
        n_ant: number of elements.
        spacing: element spacing in meters.

    Returns:
        Complex vector of length ``n_ant`` whose entry ``n`` is
        ``exp(-j 2 pi (r_n - r) / wavelength) / sqrt(n_ant)``.
    """
    if side not in ("BS", "UT"):
        raise ValueError(f"side must be 'BS' or 'UT', got {side!r}")
    if n_ant < 1:
        raise ValueError("n_ant must be >= 1")
    if not (r > 0):
        raise ValueError(f"distance must be positive or inf, got {r}")
    inv_r = 0.0 if math.isinf(r) else 1.0 / r
    return steering_matrix([math.sin(theta)], [inv_r], n_ant, spacing, wavelength)[:, 0]


@dataclass
class ChannelTensor:
    """Per-subcarrier channel matrices stacked along axis 0.

    Attributes:
        data: ``(M, rows, cols)`` complex array; uplink is ``N_BS x N_UT``.
        direction: ``"uplink"`` or ``"downlink"``.
        freqs: subcarrier frequencies in Hz.
    """

    data: np.ndarray
    direction: str = "uplink"
    freqs: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 3:
            raise ValueError(f"channel data must be 3-D (M, rows, cols), got {self.data.shape}")
        if self.direction not in ("uplink", "downlink"):
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def m_subcarriers(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, m):
        return self.data[m]

    def downlink(self) -> "ChannelTensor":
        """Reciprocal channel ``H[m]^H`` per subcarrier."""
        flipped = "downlink" if self.direction == "uplink" else "uplink"
        return ChannelTensor(np.conj(np.swapaxes(self.data, 1, 2)), flipped, self.freqs)


def los_element_distances(geom: ScenarioGeometry, cfg: SystemConfig) -> np.ndarray:
    """``(N_BS, N_UT)`` exact distances between every BS and UT element."""
    bs = np.column_stack([np.zeros(cfg.n_bs), element_offsets(cfg.n_bs, cfg.spacing)])
    ut = ut_element_positions(geom.ut_position, geom.ut_orientation, cfg.n_ut, cfg.spacing)
    diff = bs[:, None, :] - ut[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def build_channel(geom: ScenarioGeometry, cfg: SystemConfig) -> ChannelTensor:
    """Uplink channel: exact element-wise LoS plus single-bounce scattered paths.

    Scattered paths share the power normalisation ``sqrt(beta N_BS N_UT / L)``
    with ``L`` the number of scatterers actually present.
    """
    n_paths = geom.n_paths
    if not geom.los_present and n_paths == 0:
        raise ValueError("scenario has neither a LoS path nor scatterers")
    lams = cfg.wavelengths
    data = np.zeros((len(lams), cfg.n_bs, cfg.n_ut), dtype=complex)
    if geom.los_present:
        dist = los_element_distances(geom, cfg)
        amp = math.sqrt(geom.beta_los)
        for m, lam in enumerate(lams):
            data[m] += amp * np.exp(-2j * np.pi * dist / lam)
    if n_paths:
        th_bs, r_bs = geom.bs_polar[:, 0], geom.bs_polar[:, 1]
        th_ut, r_ut = geom.ut_polar[:, 0], geom.ut_polar[:, 1]
        gain = np.sqrt(geom.beta_nlos * cfg.n_bs * cfg.n_ut / n_paths) * geom.alpha
        for m, lam in enumerate(lams):
            a_bs = steering_matrix(np.sin(th_bs), 1 / r_bs, cfg.n_bs, cfg.spacing, lam)
            a_ut = steering_matrix(np.sin(th_ut), 1 / r_ut, cfg.n_ut, cfg.spacing, lam)
            coef = gain * np.exp(-2j * np.pi * (r_bs + r_ut) / lam)
            data[m] += (a_bs * coef) @ a_ut.conj().T
    return ChannelTensor(data, "uplink", cfg.subcarrier_freqs)


@dataclass
class LosSubarrays:
    """Polar parameters of the UT subarray centres used by the LoS approximation."""

    centers: np.ndarray      # (G, 2) Cartesian
    bs_theta: np.ndarray     # (G,)
    bs_r: np.ndarray         # (G,)
    ut_theta: np.ndarray     # (G,)


def los_subarrays(geom: ScenarioGeometry, cfg: SystemConfig) -> LosSubarrays:
    """Split the UT array into ``cfg.g_los`` equal blocks and locate their centres."""
    pos = ut_element_positions(geom.ut_position, geom.ut_orientation, cfg.n_ut, cfg.spacing)
    centers = pos.reshape(cfg.g_los, cfg.n_ut // cfg.g_los, 2).mean(axis=1)
    th, r = to_polar(centers[:, 0], centers[:, 1])
    th_ut = np.array([ut_side_angle(c, geom.ut_orientation, np.zeros(2)) for c in centers])
    return LosSubarrays(centers, th, r, th_ut)


def los_piecewise(geom: ScenarioGeometry, cfg: SystemConfig) -> ChannelTensor:
    """Block-wise approximation of the LoS term as ``G`` rank-one pieces.

    Each UT block is treated as a plane-wave source located at its centre;
    the BS side keeps the spherical wavefront. Useful as a reference for
    how much model mismatch the dictionary faces.
    """
    sub = los_subarrays(geom, cfg)
    n_sub = cfg.n_ut // cfg.g_los
    amp = math.sqrt(geom.beta_los * cfg.n_bs * n_sub)
    data = np.zeros((cfg.m_subcarriers, cfg.n_bs, cfg.n_ut), dtype=complex)
    for m, lam in enumerate(cfg.wavelengths):
        a_bs = steering_matrix(np.sin(sub.bs_theta), 1 / sub.bs_r, cfg.n_bs, cfg.spacing, lam)
        a_ut = steering_matrix(np.sin(sub.ut_theta), np.zeros(cfg.g_los), n_sub, cfg.spacing, lam)
        for g in range(cfg.g_los):
            block = np.outer(a_bs[:, g], a_ut[:, g].conj())
            data[m, :, g * n_sub:(g + 1) * n_sub] = amp * np.exp(-2j * np.pi * sub.bs_r[g] / lam) * block
    return ChannelTensor(data, "uplink", cfg.subcarrier_freqs)
