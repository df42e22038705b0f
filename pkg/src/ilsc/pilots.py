"""Uplink training frame, random analog combining and noisy measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelTensor
from .config import SystemConfig


@dataclass
class PilotFrame:
    """Training-stage transmit/receive configuration.

    Attributes:
        w_ul: ``(N_BS, P)`` analog combiner, the ``Q_BS`` per-subframe
            ``N_BS x N_RF`` blocks stacked column-wise. Entries have modulus
            ``1/sqrt(N_BS)``.
        f_ul: ``(N_UT, N_UT)`` DFT pilot matrix with ``F^H F = N_UT I``.
        symbols: ``(M, N_UT)`` unit-modulus baseband pilot symbols.
        q_bs: number of subframes.
    """

    w_ul: np.ndarray
    f_ul: np.ndarray
    symbols: np.ndarray
    q_bs: int

    @property
    def p_meas(self) -> int:
        return self.w_ul.shape[1]

    @property
    def n_rf(self) -> int:
        return self.p_meas // self.q_bs

    def block(self, q: int) -> np.ndarray:
        return self.w_ul[:, q * self.n_rf:(q + 1) * self.n_rf]


def dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def build_pilot_frame(cfg: SystemConfig, seed: int) -> PilotFrame:
    """Draw uniform phases for every combiner entry and every pilot symbol."""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2 * np.pi, size=(cfg.n_bs, cfg.p_meas))
    w = np.exp(1j * phases) / math.sqrt(cfg.n_bs)
    sym = np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=(cfg.m_subcarriers, cfg.n_ut)))
    return PilotFrame(w, dft_matrix(cfg.n_ut), sym, cfg.q_bs)


@dataclass
class MeasurementSet:
    """Despread measurements ``Y[m] = W^H H[m] + N[m]``.

    Attributes:
        y: ``(M, P, N_UT)`` complex.
        noise_var: variance of each entry of the effective noise ``N[m]``.
        snr_db: empirical mean signal power over mean noise power.
        tx_power_mw: uplink transmit power used, in mW.
    """

    y: np.ndarray
    noise_var: float
    snr_db: float
    tx_power_mw: float

    @property
    def shape(self):
        return self.y.shape


def signal_power(channel: ChannelTensor, frame: PilotFrame) -> float:
    """Mean ``|[W^H H[m]]_{p,n}|^2`` over all entries and subcarriers."""
    wh = frame.w_ul.conj().T
    return float(np.mean(np.abs(wh @ channel.data) ** 2))


def solve_tx_power(channel: ChannelTensor, frame: PilotFrame, cfg: SystemConfig,
                   snr_db: float) -> float:
    """Uplink power in mW giving the requested mean per-entry SNR after despreading."""
    sig = signal_power(channel, frame)
    if sig <= 0:
        raise ValueError("channel carries no energy through the combiner")
    return 10 ** (snr_db / 10) * cfg.noise_power * cfg.m_subcarriers / (sig * cfg.n_ut)


def simulate_uplink(channel: ChannelTensor, frame: PilotFrame, cfg: SystemConfig,
                    seed: int, noise_scale: float = 1.0) -> MeasurementSet:
    """Pass the pilots through the channel, add AWGN, combine and despread.

    Receiver noise is drawn per subframe at the antennas, combined with that
    subframe's analog block, then despread together with the signal by
    ``S^H F^H`` and scaled by ``M / (P_t N_UT)``. The effective noise
    variance is therefore ``sigma^2 M / (P_t N_UT)``.

    Args:
        channel: uplink tensor, ``(M, N_BS, N_UT)``.
        frame: pilot frame built for the same config.
        cfg: system parameters. When ``cfg.snr_target_db`` is set the
            transmit power is solved to hit it, otherwise ``cfg.p_t_ul``
            (dBm) is used.
        seed: noise seed.
        noise_scale: multiplies the noise standard deviation; 0 gives the
            noiseless measurement.
    """
    if channel.direction != "uplink":
        raise ValueError("simulate_uplink needs an uplink channel")
    m_sub, n_bs, n_ut = channel.data.shape
    if (n_bs, n_ut) != (frame.w_ul.shape[0], frame.f_ul.shape[0]) or m_sub != len(frame.symbols):
        raise ValueError(
            f"channel shape {channel.data.shape} does not match the pilot frame "
            f"({len(frame.symbols)}, {frame.w_ul.shape[0]}, {frame.f_ul.shape[0]})")
    if cfg.snr_target_db is not None:
        p_t = solve_tx_power(channel, frame, cfg, cfg.snr_target_db)
    else:
        p_t = 10 ** (cfg.p_t_ul / 10)
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(cfg.noise_power) * noise_scale
    n_rf = frame.n_rf
    wh = frame.w_ul.conj().T
    y = np.empty((m_sub, frame.p_meas, n_ut), dtype=complex)
    sig_pow = 0.0
    noise_pow = 0.0
    despread_scale = m_sub / (p_t * n_ut)
    for m in range(m_sub):
        s_mat = math.sqrt(p_t / m_sub) * np.diag(frame.symbols[m])
        tx = frame.f_ul @ s_mat
        post = s_mat.conj().T @ frame.f_ul.conj().T
        clean = wh @ channel.data[m] @ tx
        noise = np.empty_like(clean)
        for q in range(frame.q_bs):
            rx_noise = sigma * (rng.standard_normal((n_bs, n_ut))
                                + 1j * rng.standard_normal((n_bs, n_ut))) / math.sqrt(2)
            noise[q * n_rf:(q + 1) * n_rf] = frame.block(q).conj().T @ rx_noise
        sig = despread_scale * clean @ post
        eff = despread_scale * noise @ post
        y[m] = sig + eff
        sig_pow += float(np.sum(np.abs(sig) ** 2))
        noise_pow += float(np.sum(np.abs(eff) ** 2))
    noise_var = cfg.noise_power * noise_scale ** 2 * despread_scale
    if noise_pow == 0:
        snr = math.inf
    elif sig_pow == 0:
        snr = -math.inf
    else:
        snr = 10 * math.log10(sig_pow / noise_pow)
    return MeasurementSet(y, noise_var, snr, p_t)
