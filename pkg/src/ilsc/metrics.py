"""Estimation and localisation error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelTensor

# reported in place of -inf dB for exact estimates
DB_FLOOR = -300.0


def to_db(ratio: float, power: bool = True) -> float:
    """``10 log10`` (power) or ``20 log10`` (amplitude), floored at :data:`DB_FLOOR`."""
    if ratio < 0 or math.isnan(ratio):
        raise ValueError(f"cannot express {ratio} in dB")
    if ratio == 0:
        return DB_FLOOR
    if math.isinf(ratio):
        return math.inf
    return max((10 if power else 20) * math.log10(ratio), DB_FLOOR)


def nmse(truth, estimate) -> float:
    """Subcarrier-averaged ``||H - H_hat||_F^2 / ||H||_F^2`` in dB.

    Args:
        truth: ChannelTensor or ``(M, rows, cols)`` array.
        estimate: same shape as ``truth``.

    Raises:
        ValueError: shapes differ or some subcarrier of ``truth`` is all zero.
    """
    h = truth.data if isinstance(truth, ChannelTensor) else np.asarray(truth)
    e = estimate.data if isinstance(estimate, ChannelTensor) else np.asarray(estimate)
    if h.shape != e.shape:
        raise ValueError(f"shape mismatch {h.shape} vs {e.shape}")
    ref = np.sum(np.abs(h) ** 2, axis=(1, 2))
    if np.any(ref == 0):
        raise ValueError("true channel has a zero-norm subcarrier; NMSE undefined")
    err = np.sum(np.abs(h - e) ** 2, axis=(1, 2))
    return to_db(float(np.mean(err / ref)))


@dataclass
class RmseResult:
    """Angle and distance RMSE with the per-trial squared errors kept for CDFs."""

    theta_db: float
    r_db: float
    theta_sq: np.ndarray
    r_sq: np.ndarray

    @property
    def theta(self) -> float:
        return float(math.sqrt(np.mean(self.theta_sq)))

    @property
    def r(self) -> float:
        return float(math.sqrt(np.mean(self.r_sq)))


def rmse(truth, estimates) -> RmseResult:
    """RMSE over trials of polar ``(theta, r)`` estimates, each in ``20 log10`` dB.

    Args:
        truth: ``(T, 2)`` true ``(theta [rad], r [m])`` per trial.
        estimates: ``(T, 2)`` estimates; a missing estimate (``nan`` angle,
            ``inf`` distance) makes the corresponding RMSE infinite.
    """
    t = np.asarray(truth, dtype=float).reshape(-1, 2)
    e = np.asarray(estimates, dtype=float).reshape(-1, 2)
    if t.shape != e.shape or len(t) == 0:
        raise ValueError("need matching, non-empty truth and estimate lists")
    with np.errstate(invalid="ignore"):
        d_th = np.angle(np.exp(1j * (e[:, 0] - t[:, 0])))
        d_r = e[:, 1] - t[:, 1]
    th_sq = np.where(np.isfinite(d_th), d_th ** 2, np.inf)
    r_sq = np.where(np.isfinite(d_r), d_r ** 2, np.inf)
    return RmseResult(to_db(math.sqrt(np.mean(th_sq)), power=False),
                      to_db(math.sqrt(np.mean(r_sq)), power=False), th_sq, r_sq)


def polar_of(xy) -> tuple[float, float]:
    """``(theta, r)`` of a Cartesian point; ``(nan, inf)`` when it is missing."""
    if xy is None:
        return math.nan, math.inf
    x, y = np.asarray(xy, dtype=float)
    if not (math.isfinite(x) and math.isfinite(y)):
        return math.nan, math.inf
    return math.atan2(y, x), math.hypot(x, y)
