"""Random UT/scatterer layouts and large-scale path gains.

Geometry conventions (BS at the origin, BS array along the y axis):

* a point at BS-polar coordinates ``(theta, r)`` sits at
  ``(r cos theta, r sin theta)``;
* the UT array is centred at ``p`` with element ``n`` at
  ``p + delta_n d (sin phi, -cos phi)``, so its axis has slope
  ``tan(phi - pi/2)``; with this orientation the far-field phase across
  the UT elements equals ``conj(a_UT(theta_UT))``, matching the
  ``a_BS a_UT^H`` factorisation of the scattered paths;
* the UT-side angle of a target ``t`` is ``phi + pi - atan2(t - p)``,
  wrapped to ``(-pi, pi]``; with this choice the LoS satisfies
  ``phi = theta_BS + theta_UT`` and every target lies on the line through
  ``p`` with slope ``tan(phi - theta_UT)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import SystemConfig


class Link(str, Enum):
    LOS = "LoS"
    NLOS = "NLoS"


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance model ``A + 10 n log10(d) + 20 log10(f_GHz)`` in dB."""

    intercept: float = 32.4
    exponent_los: float = 2.1
    exponent_nlos: float = 3.19
    nlos_offset: float = 10.0

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "PathLossModel":
        return cls(cfg.pl_intercept, cfg.pl_exponent_los, cfg.pl_exponent_nlos,
                   cfg.pl_nlos_offset)

    def loss_db(self, link: Link | str, distance, f_c: float):
        distance = np.asarray(distance, dtype=float)
        if np.any(distance <= 0):
            raise ValueError("path loss needs a positive distance")
        link = Link(link)
        n = self.exponent_los if link is Link.LOS else self.exponent_nlos
        pl = self.intercept + 10 * n * np.log10(distance) + 20 * math.log10(f_c / 1e9)
        if link is Link.NLOS:
            pl = pl + self.nlos_offset
        return pl


def path_loss(model: PathLossModel, link: Link | str, distance, f_c: float):
    """Linear power gain ``beta = 10^(-PL_dB/10)``."""
    return 10 ** (-model.loss_db(link, distance, f_c) / 10)


def to_polar(x, y):
    """Cartesian -> (theta, r) about the BS array centre."""
    return np.arctan2(y, x), np.hypot(x, y)


def from_polar(theta, r):
    return r * np.cos(theta), r * np.sin(theta)


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def ut_side_angle(ut_xy, orientation, target_xy):
    """Departure angle at the UT array toward ``target_xy`` (radians)."""
    ut_xy = np.asarray(ut_xy, dtype=float)
    t = np.asarray(target_xy, dtype=float)
    bearing = np.arctan2(t[..., 1] - ut_xy[1], t[..., 0] - ut_xy[0])
    return wrap_angle(orientation + np.pi - bearing)


def ut_element_positions(ut_xy, orientation: float, n_ut: int, spacing: float) -> np.ndarray:
    delta = (2 * np.arange(1, n_ut + 1) - n_ut - 1) / 2
    axis = np.array([math.sin(orientation), -math.cos(orientation)])
    return np.asarray(ut_xy, dtype=float)[None, :] + (delta * spacing)[:, None] * axis[None, :]


@dataclass
class ScenarioGeometry:
    """One drawn layout. Angles are radians, distances meters.

    ``scatterers`` is ``(L, 2)`` Cartesian; ``bs_polar`` and ``ut_polar``
    hold ``(theta, r)`` per scatterer as seen from the BS and from the UT.
    """

    ut_position: np.ndarray
    ut_orientation: float
    scatterers: np.ndarray
    bs_polar: np.ndarray
    ut_polar: np.ndarray
    los_present: bool
    alpha: np.ndarray
    beta_los: float
    beta_nlos: np.ndarray

    @property
    def n_paths(self) -> int:
        return len(self.scatterers)

    @property
    def ut_polar_bs(self) -> tuple[float, float]:
        th, r = to_polar(*self.ut_position)
        return float(th), float(r)

    @property
    def los_ut_angle(self) -> float:
        return float(ut_side_angle(self.ut_position, self.ut_orientation, np.zeros(2)))


def build_geometry(ut_position, ut_orientation, scatterers, alpha, cfg: SystemConfig,
                   los_present: bool = True) -> ScenarioGeometry:
    """Assemble a ScenarioGeometry from explicit positions (for tests and replays)."""
    ut = np.asarray(ut_position, dtype=float)
    sc = np.asarray(scatterers, dtype=float).reshape(-1, 2)
    model = PathLossModel.from_config(cfg)
    th_bs, r_bs = to_polar(sc[:, 0], sc[:, 1])
    r_ut = np.hypot(sc[:, 0] - ut[0], sc[:, 1] - ut[1])
    th_ut = ut_side_angle(ut, ut_orientation, sc) if len(sc) else np.zeros(0)
    beta_los = float(path_loss(model, Link.LOS, np.hypot(*ut), cfg.f_c))
    beta_nlos = path_loss(model, Link.NLOS, r_bs + r_ut, cfg.f_c) if len(sc) else np.zeros(0)
    return ScenarioGeometry(
        ut_position=ut,
        ut_orientation=float(ut_orientation),
        scatterers=sc,
        bs_polar=np.column_stack([th_bs, r_bs]),
        ut_polar=np.column_stack([th_ut, r_ut]),
        los_present=los_present,
        alpha=np.asarray(alpha, dtype=complex).reshape(-1),
        beta_los=beta_los,
        beta_nlos=np.asarray(beta_nlos, dtype=float),
    )


def sample_scenario(cfg: SystemConfig, seed: int, max_tries: int = 1000) -> ScenarioGeometry:
    """Draw a UT pose and ``cfg.l_max`` scatterers.

    The UT faces the BS: its LoS departure angle is uniform within
    ``+-cfg.ut_facing_spread``. Scatterers falling behind the UT array
    (|theta_UT| > pi/2 - 0.1) or within 1 m of the UT are redrawn.
    """
    rng = np.random.default_rng(seed)
    th_ut_bs = rng.uniform(*cfg.ut_angle_range)
    r_ut_bs = rng.uniform(*cfg.ut_range)
    ut = np.array(from_polar(th_ut_bs, r_ut_bs))
    phi = th_ut_bs + rng.uniform(-cfg.ut_facing_spread, cfg.ut_facing_spread)

    pts = []
    tries = 0
    while len(pts) < cfg.l_max:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not place scatterers in front of the UT")
        th = rng.uniform(*cfg.scatterer_angle_range)
        r = rng.uniform(*cfg.scatterer_range)
        p = np.array(from_polar(th, r))
        if np.hypot(*(p - ut)) < 1.0:
            continue
        if abs(float(ut_side_angle(ut, phi, p))) > np.pi / 2 - 0.1:
            continue
        pts.append(p)
    sc = np.array(pts).reshape(-1, 2)
    alpha = (rng.standard_normal(len(sc)) + 1j * rng.standard_normal(len(sc))) / math.sqrt(2)
    return build_geometry(ut, phi, sc, alpha, cfg, los_present=cfg.los)
