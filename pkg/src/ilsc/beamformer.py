"""Squint-aware analog codebooks, SOMP hybrid precoding and spectral efficiency.

Analog phases are designed at the carrier wavelength. A beam focused on
``(r0, theta0)`` drifts with frequency; :func:`squint_trajectory` gives the
drift and its exact inverse (where to aim so subcarrier ``m`` lands on the
target). :func:`broadened_beam` splits the array into subarrays whose
sub-beams jointly cover the inverse-squint span.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelTensor, element_offsets, steering_matrix, steering_vector
from .config import SystemConfig
from .numerics import svd

# 3 dB widths of an N-element subarray in sin(theta) and in 1/r (the latter
# times N^2 lambda cos^2 theta)
ANGLE_WIDTH = 1.0
DEPTH_WIDTH = 1.556


class OutOfVisibleRegionError(ValueError):
    """A squinted or pre-squinted angle leaves ``|sin theta| <= 1``."""

    def __init__(self, message: str, subcarrier: int):
        super().__init__(message)
        self.subcarrier = subcarrier


# ------------------------------------------------------------- squint maps

def squint_trajectory(r0: float, theta0: float, wavelengths, wavelength_c: float,
                      inverse: bool = False):
    """Per-subcarrier focus of a carrier-designed beam, or its pre-image.

    Forward: ``sin t_m = sin theta0 * lam_m / lam_c`` and
    ``r_m = r0 (lam_c / lam_m) cos^2 t_m / cos^2 theta0``.

    Inverse: the point to focus at the carrier so that subcarrier ``m``
    lands on ``(r0, theta0)``: ``sin t_m = sin theta0 * lam_c / lam_m`` and
    ``1/r_m = (1/r0)(lam_c / lam_m) cos^2 theta0 / cos^2 t_m``, which undoes
    the forward map exactly.

    Returns:
        ``(r, theta)`` arrays over subcarriers; ``r`` is ``inf`` when
        ``r0`` is.

    Raises:
        OutOfVisibleRegionError: with the first offending subcarrier index.
    """
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    lam = np.atleast_1d(np.asarray(wavelengths, dtype=float))
    ratio = wavelength_c / lam if inverse else lam / wavelength_c
    s = math.sin(theta0) * ratio
    bad = np.flatnonzero(np.abs(s) > 1)
    if bad.size:
        raise OutOfVisibleRegionError(
            f"subcarrier {int(bad[0])} maps outside the visible region (sin={s[bad[0]]:.4f})",
            int(bad[0]))
    cos2_0 = 1 - math.sin(theta0) ** 2
    cos2 = 1 - s ** 2
    if inverse:
        inv_r = (1 / r0) * (wavelength_c / lam) * cos2_0 / cos2
        with np.errstate(divide="ignore"):
            r = np.where(inv_r > 0, 1 / np.where(inv_r > 0, inv_r, 1), np.inf)
    else:
        r = r0 * (wavelength_c / lam) * cos2 / cos2_0
    return r, np.arcsin(s)


def array_gain(beam: np.ndarray, r: float, theta: float, wavelength: float,
               spacing: float) -> float:
    """``|a(r, theta, lam)^H beam|`` for a unit-norm beam."""
    a = steering_vector("BS", theta, r, wavelength, len(beam), spacing)
    return float(abs(np.vdot(a, beam)))


def gain_map(beam: np.ndarray, sin_grid, inv_r_grid, wavelength: float,
             spacing: float) -> np.ndarray:
    """Gains over the product grid, shape ``(len(inv_r_grid), len(sin_grid))``."""
    s = np.asarray(sin_grid, dtype=float)
    u = np.asarray(inv_r_grid, dtype=float)
    ss, uu = np.meshgrid(s, u)
    a = steering_matrix(ss.ravel(), uu.ravel(), len(beam), spacing, wavelength)
    return np.abs(a.conj().T @ beam).reshape(ss.shape)


# --------------------------------------------------------- broadened beams

@dataclass
class BeamSpec:
    """How a codebook column was built."""

    r: float
    theta: float
    n_subarrays: int
    flags: list = field(default_factory=list)


def focused_beam(r0: float, theta0: float, cfg: SystemConfig) -> np.ndarray:
    """Carrier-frequency steering vector toward ``(r0, theta0)``."""
    return steering_vector("BS", theta0, r0, cfg.wavelength_c, cfg.n_bs, cfg.spacing)


def subarray_count(delta_sin: float, delta_inv_r: float, n_bs: int, wavelength_c: float,
                   cos2_0: float, use_depth: bool = True):
    """Smallest divisor ``G`` of ``n_bs`` whose sub-beams span both intervals.

    Returns:
        ``(G, feasible)``; when nothing fits, ``(n_bs, False)``.
    """
    for g in range(1, n_bs + 1):
        if n_bs % g:
            continue
        n_sub = n_bs // g
        ok = ANGLE_WIDTH * g / n_sub >= delta_sin
        if use_depth:
            ok = ok and DEPTH_WIDTH * g / (n_sub ** 2 * wavelength_c * cos2_0) >= delta_inv_r
        if ok:
            return g, True
    return n_bs, False


def subarray_beam(sin_g, inv_r_g, n_bs: int, spacing: float, wavelength_c: float) -> np.ndarray:
    """Concatenate per-subarray phases; subarray ``g`` aims at ``(sin_g[g], 1/r_g[g])``.

    Phases use the exact distance from each element (global offsets) to the
    sub-beam focus, so every entry has modulus ``1/sqrt(n_bs)``.
    """
    sin_g = np.asarray(sin_g, dtype=float)
    inv_r_g = np.asarray(inv_r_g, dtype=float)
    g = len(sin_g)
    n_sub = n_bs // g
    cols = steering_matrix(sin_g, inv_r_g, n_bs, spacing, wavelength_c)  # (N, G)
    out = np.empty(n_bs, dtype=complex)
    for i in range(g):
        out[i * n_sub:(i + 1) * n_sub] = cols[i * n_sub:(i + 1) * n_sub, i]
    return out


def broadened_beam(r0: float, theta0: float, cfg: SystemConfig, far_field: bool = False):
    """Beam whose subarrays jointly cover the inverse-squint span of ``(r0, theta0)``.

    Sub-beam offsets are centred on the span midpoint and spaced by one
    subarray 3 dB width. The distance offsets take the sign that follows
    the pre-squint trajectory (``1/r`` rising or falling with ``sin``).

    A target whose pre-squint angle leaves the visible region at some
    subcarrier gets the focused beam instead, with a flag.

    Args:
        far_field: drop the distance term (plane-wave sub-beams, angle-only
            criterion); this is the far-field broadening baseline.

    Returns:
        ``(beam, BeamSpec)``.
    """
    lam = cfg.wavelengths
    lam_c = cfg.wavelength_c
    flags: list[str] = []
    try:
        r_pre, th_pre = squint_trajectory(r0, theta0, lam, lam_c, inverse=True)
    except OutOfVisibleRegionError as exc:
        # no carrier-frequency focus reaches the target at some subcarrier
        beam = steering_vector("BS", theta0, r0, lam_c, cfg.n_bs, cfg.spacing)
        return beam, BeamSpec(r0, theta0, 1, [f"out-of-visible-region:{exc.subcarrier}"])
    s_pre = np.sin(th_pre)
    u_pre = 1 / r_pre
    cos2_0 = max(math.cos(theta0) ** 2, 1e-6)
    d_sin = float(abs(s_pre[-1] - s_pre[0]))
    d_inv = float(abs(u_pre[-1] - u_pre[0]))
    g, ok = subarray_count(d_sin, d_inv, cfg.n_bs, lam_c, cos2_0, use_depth=not far_field)
    if not ok:
        flags.append("subarray-count-infeasible")
    n_sub = cfg.n_bs // g
    k = np.arange(1, g + 1)
    centred = (2 * k - 1 - g) / 2
    mid_sin = 0.5 * (s_pre[0] + s_pre[-1])
    sin_g = mid_sin + centred * ANGLE_WIDTH / n_sub
    if far_field:
        inv_r_g = np.zeros(g)
    else:
        mid_inv = 0.5 * (u_pre[0] + u_pre[-1])
        slope = np.sign((u_pre[-1] - u_pre[0]) * (s_pre[-1] - s_pre[0])) or 1.0
        step = 0.5 * DEPTH_WIDTH / (n_sub ** 2 * lam_c * cos2_0)
        inv_r_g = np.maximum(mid_inv + slope * centred * step, 0.0)
    if np.any(np.abs(sin_g) > 1):
        flags.append("sub-beam-clipped")
        sin_g = np.clip(sin_g, -1, 1)
    beam = subarray_beam(sin_g, inv_r_g, cfg.n_bs, cfg.spacing, lam_c)
    return beam, BeamSpec(r0, theta0, g, flags)


@dataclass
class BeamCodebook:
    """Analog codebook columns with their polar tags.

    Attributes:
        columns: ``(N_BS, C)`` complex, unit-modulus entries scaled by
            ``1/sqrt(N_BS)``.
        tags: ``(C, 2)`` polar ``(theta, r)`` each column aims at.
        roles: ``"ut"``, ``"scatterer"`` or ``"los-center"`` per column.
        n_subarrays: subarray count used per column.
    """

    columns: np.ndarray
    tags: np.ndarray
    roles: list
    n_subarrays: list
    flags: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.columns.shape[1]


def codebook_targets(report) -> tuple[list, list]:
    """Polar targets of the codebook: refined UT, refined scatterers, LoS centres."""
    from .locator import LOS  # local import keeps module load order simple

    targets, roles = [], []
    if report.refined_ut is not None:
        x, y = report.refined_ut
        targets.append((math.atan2(y, x), math.hypot(x, y)))
        roles.append("ut")
    for x, y in np.asarray(report.refined_scatterers).reshape(-1, 2):
        targets.append((math.atan2(y, x), math.hypot(x, y)))
        roles.append("scatterer")
    for v in report.vas:
        if v.cls == LOS:
            targets.append((v.theta, v.r))
            roles.append("los-center")
    return targets, roles


def build_codebook(report, cfg: SystemConfig, kind: str = "broadened") -> BeamCodebook:
    """One column per sensed location.

    Args:
        report: a :class:`ilsc.locator.LocationReport`.
        kind: ``"broadened"`` (proposed), ``"focused"`` (one subarray) or
            ``"far-broadened"`` (plane-wave sub-beams, angle-only spread).
    """
    targets, roles = codebook_targets(report)
    if not targets:
        raise ValueError("location report holds no positions to build a codebook from")
    cols, groups, flags = [], [], []
    for theta, r in targets:
        if kind == "focused":
            cols.append(focused_beam(r, theta, cfg))
            groups.append(1)
            continue
        if kind not in ("broadened", "far-broadened"):
            raise ValueError(f"unknown codebook kind {kind!r}")
        r_eff = r if math.isfinite(r) and r > 0 else 1e12
        beam, spec = broadened_beam(r_eff, theta, cfg, far_field=(kind == "far-broadened"))
        cols.append(beam)
        groups.append(spec.n_subarrays)
        flags.extend(spec.flags)
    return BeamCodebook(np.column_stack(cols), np.array(targets, dtype=float).reshape(-1, 2),
                        roles, groups, flags)


def dft_codebook(n_ant: int) -> np.ndarray:
    """Far-field DFT beams at ``sin theta = (2n - N + 1)/N``, unit-norm columns."""
    s = (2 * np.arange(n_ant) - n_ant + 1) / n_ant
    x = element_offsets(n_ant, 0.5)
    return np.exp(2j * np.pi * np.outer(x, s)) / math.sqrt(n_ant)


# ------------------------------------------------------------------- SOMP

@dataclass
class HybridPrecoder:
    """``F[m] = F_RF @ F_BB[m]``.

    Attributes:
        f_rf: ``(N, N_RF)`` analog part.
        f_bb: ``(M, N_RF, N_s)`` digital part.
        selected: codebook column indices in selection order.
        residual: ``sum_m ||F_opt[m] - F_RF F_BB[m]||_F`` before power scaling.
    """

    f_rf: np.ndarray
    f_bb: np.ndarray
    selected: list
    residual: float
    flags: list = field(default_factory=list)

    def matrix(self, m: int) -> np.ndarray:
        return self.f_rf @ self.f_bb[m]

    @property
    def stack(self) -> np.ndarray:
        return np.einsum("nr,mrs->mns", self.f_rf, self.f_bb)


def _ls_baseband(f_rf: np.ndarray, f_opt: np.ndarray, flags: list | None = None) -> np.ndarray:
    """Least-squares ``F_BB[m]`` for every m; pseudo-inverse if rank-deficient."""
    rank = np.linalg.matrix_rank(f_rf)
    if rank < f_rf.shape[1] and flags is not None:
        flags.append("rank-deficient-analog")
    pinv = np.linalg.pinv(f_rf)
    return np.einsum("rn,mns->mrs", pinv, f_opt)


def approximation_residual(f_opt: np.ndarray, f_rf: np.ndarray) -> float:
    """``sum_m ||F_opt[m] - F_RF F_BB[m]||_F`` with least-squares ``F_BB``."""
    bb = _ls_baseband(f_rf, f_opt)
    approx = np.einsum("nr,mrs->mns", f_rf, bb)
    return float(np.sum(np.linalg.norm(f_opt - approx, axis=(1, 2))))


def somp_hybrid(f_opt: np.ndarray, codebook: np.ndarray, n_rf: int,
                power: float | None = None) -> HybridPrecoder:
    """Simultaneous OMP choice of ``n_rf`` codebook columns across subcarriers.

    At each step the column with the largest projection energy onto the
    current residuals, summed over all m, is added (lowest index on ties);
    residuals are normalised per subcarrier so every m weighs the same.

    Args:
        f_opt: ``(M, N, N_s)`` target precoders.
        codebook: ``(N, C)`` candidate analog beams.
        n_rf: number of columns to pick, at most ``C``.
        power: when given, ``F_BB[m]`` is scaled so that
            ``||F_RF F_BB[m]||_F^2 = power``.
    """
    f_opt = np.asarray(f_opt, dtype=complex)
    codebook = np.asarray(codebook, dtype=complex)
    if n_rf > codebook.shape[1]:
        raise ValueError(f"n_rf={n_rf} exceeds codebook size {codebook.shape[1]}")
    flags: list[str] = []
    chosen: list[int] = []
    resid = f_opt.copy()
    for _ in range(n_rf):
        proj = np.einsum("nc,mns->mcs", codebook.conj(), resid)
        score = np.sum(np.abs(proj) ** 2, axis=(0, 2))
        score[chosen] = -np.inf
        chosen.append(int(np.argmax(score)))
        f_rf = codebook[:, chosen]
        bb = _ls_baseband(f_rf, f_opt)
        resid = f_opt - np.einsum("nr,mrs->mns", f_rf, bb)
        norms = np.linalg.norm(resid, axis=(1, 2))
        resid = resid / np.where(norms > 0, norms, 1.0)[:, None, None]
    f_rf = codebook[:, chosen]
    bb = _ls_baseband(f_rf, f_opt, flags)
    approx = np.einsum("nr,mrs->mns", f_rf, bb)
    residual = float(np.sum(np.linalg.norm(f_opt - approx, axis=(1, 2))))
    if power is not None:
        bb = scale_to_power(f_rf, bb, power)
    return HybridPrecoder(f_rf, bb, chosen, residual, flags)


def scale_to_power(f_rf: np.ndarray, f_bb: np.ndarray, power: float) -> np.ndarray:
    """Rescale each ``F_BB[m]`` so ``||F_RF F_BB[m]||_F^2 = power``."""
    tot = np.linalg.norm(np.einsum("nr,mrs->mns", f_rf, f_bb), axis=(1, 2))
    scale = np.where(tot > 0, math.sqrt(power) / np.where(tot > 0, tot, 1.0), 0.0)
    return f_bb * scale[:, None, None]


def exhaustive_hybrid(f_opt: np.ndarray, codebook: np.ndarray, n_rf: int):
    """Best subset of ``n_rf`` columns by brute force; returns ``(subset, residual)``."""
    best = None
    for subset in itertools.combinations(range(codebook.shape[1]), n_rf):
        res = approximation_residual(f_opt, codebook[:, list(subset)])
        if best is None or res < best[1]:
            best = (list(subset), res)
    return best


def optimal_precoders(channel_dl: ChannelTensor, n_streams: int) -> np.ndarray:
    """First ``n_streams`` right singular vectors of each ``H_DL[m]``, ``(M, N_BS, N_s)``."""
    out = []
    for m in range(channel_dl.m_subcarriers):
        _, _, v = svd(channel_dl[m])
        out.append(v[:, :n_streams])
    return np.stack(out)


# --------------------------------------------------- combining and rates

def mmse_combiner(h: np.ndarray, f: np.ndarray, noise_var: float) -> np.ndarray:
    """``(H F F^H H^H + sigma^2 I)^-1 H F`` for one subcarrier."""
    hf = h @ f
    cov = hf @ hf.conj().T + noise_var * np.eye(h.shape[0])
    return np.linalg.solve(cov, hf)


def hybrid_combiner(h: np.ndarray, f_stack: np.ndarray, noise_var: float,
                    codebook: np.ndarray, n_rf: int) -> np.ndarray:
    """SOMP approximation of the per-subcarrier MMSE combiners on a UT codebook.

    Returns:
        ``(M, N_UT, N_s)`` combiners ``W_RF W_BB[m]``.
    """
    w_opt = np.stack([mmse_combiner(h[m], f_stack[m], noise_var) for m in range(len(h))])
    hyb = somp_hybrid(w_opt, codebook, min(n_rf, codebook.shape[1]))
    return hyb.stack


def range_basis(w: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the column space of ``w``.

    The log-det rate depends on the combiner only through its column space,
    so this keeps the rate of a rank-deficient MMSE combiner (streams the
    channel cannot carry) while making ``W^H W`` invertible.
    """
    u, s, _ = np.linalg.svd(w, full_matrices=False)
    keep = s > rtol * (s[0] if s.size and s[0] > 0 else 1.0)
    if not np.any(keep):
        return u[:, :1]
    return u[:, keep]


def subcarrier_rates(channel_dl: ChannelTensor, precoders: np.ndarray, combiners: np.ndarray,
                     noise_var: float) -> np.ndarray:
    """``log2 det(I + R_n^-1 W^H H F F^H H^H W)`` per subcarrier, ``R_n = sigma^2 W^H W``."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    rates = np.empty(channel_dl.m_subcarriers)
    for m in range(channel_dl.m_subcarriers):
        w = combiners[m]
        rn = noise_var * (w.conj().T @ w)
        if np.linalg.matrix_rank(rn) < rn.shape[0]:
            raise np.linalg.LinAlgError(f"singular combined noise covariance at subcarrier {m}")
        eff = w.conj().T @ channel_dl[m] @ precoders[m]
        mat = np.eye(w.shape[1]) + np.linalg.solve(rn, eff @ eff.conj().T)
        sign, logdet = np.linalg.slogdet(mat)
        rates[m] = logdet / math.log(2)
    return rates


def spectral_efficiency(channel_dl: ChannelTensor, precoders: np.ndarray, noise_var: float,
                        combiners: np.ndarray | None = None, per_subcarrier: bool = False):
    """Subcarrier-averaged log-det rate in bits/s/Hz.

    Args:
        channel_dl: downlink channel, ``(M, N_UT, N_BS)``.
        precoders: ``(M, N_BS, N_s)``.
        noise_var: receiver noise power (linear, same units as the channel
            and precoder powers).
        combiners: ``(M, N_UT, N_s)``; when omitted, MMSE combiners on the
            true channel reduced to their column space (see :func:`range_basis`).
        per_subcarrier: also return the per-subcarrier rates.
    """
    if combiners is None:
        combiners = [range_basis(mmse_combiner(channel_dl[m], precoders[m], noise_var))
                     for m in range(channel_dl.m_subcarriers)]
    rates = subcarrier_rates(channel_dl, precoders, combiners, noise_var)
    se = float(np.mean(rates))
    return (se, rates) if per_subcarrier else se


# ------------------------------------------------------------- schemes

BEAM_SCHEMES = ("proposed", "focused", "far-broadened", "center-ideal", "dft-somp")


def center_ideal_precoder(f_opt: np.ndarray, n_rf: int, power: float) -> HybridPrecoder:
    """Analog phases taken from the centre subcarrier's optimal precoder.

    The phases of the first ``n_rf`` columns of ``F_opt`` at the centre
    subcarrier (unit modulus, ``1/sqrt(N)``) form ``F_RF``; the digital part
    is fit per subcarrier by least squares.
    """
    m_c = f_opt.shape[0] // 2
    cols = f_opt[m_c][:, :n_rf]
    f_rf = np.exp(1j * np.angle(cols)) / math.sqrt(f_opt.shape[1])
    bb = _ls_baseband(f_rf, f_opt)
    approx = np.einsum("nr,mrs->mns", f_rf, bb)
    residual = float(np.sum(np.linalg.norm(f_opt - approx, axis=(1, 2))))
    return HybridPrecoder(f_rf, scale_to_power(f_rf, bb, power), list(range(n_rf)), residual)


def ut_codebook(report, cfg: SystemConfig) -> np.ndarray:
    """Far-field UT-side beams at the sensed departure angles plus a DFT fill."""
    angles = [v.ut_theta for v in report.vas if v.ut_theta is not None]
    cols = [steering_vector("UT", a, math.inf, cfg.wavelength_c, cfg.n_ut, cfg.spacing)
            for a in angles]
    base = dft_codebook(cfg.n_ut)
    return np.column_stack(cols + [base]) if cols else base


def design_precoder(scheme: str, channel_est_dl: ChannelTensor, report, cfg: SystemConfig):
    """Hybrid precoder of a named scheme from the estimated downlink channel.

    Returns:
        ``(HybridPrecoder, n_streams)``.
    """
    power = 10 ** (cfg.p_t_dl / 10) / cfg.m_subcarriers
    if scheme == "dft-somp":
        cb = dft_codebook(cfg.n_bs)
    elif scheme in ("proposed", "focused", "far-broadened"):
        kind = {"proposed": "broadened", "focused": "focused", "far-broadened": "far-broadened"}[scheme]
        cb = build_codebook(report, cfg, kind=kind).columns
    elif scheme == "center-ideal":
        cb = None
    else:
        raise ValueError(f"unknown beamforming scheme {scheme!r}; choose from {BEAM_SCHEMES}")
    n_rf = cfg.n_rf_bs if cb is None else min(cfg.n_rf_bs, cb.shape[1])
    n_s = min(cfg.n_streams, n_rf, cfg.n_ut)
    f_opt = optimal_precoders(channel_est_dl, n_s)
    if cb is None:
        return center_ideal_precoder(f_opt, n_rf, power), n_s
    hyb = somp_hybrid(f_opt, cb, n_rf, power=power)
    if n_rf < cfg.n_rf_bs:
        hyb.flags.append(f"rf-chains-reduced:{cfg.n_rf_bs}->{n_rf}")
    return hyb, n_s


def evaluate_scheme(scheme: str, channel_true_dl: ChannelTensor, channel_est_dl: ChannelTensor,
                    report, cfg: SystemConfig, combiner: str = "mmse"):
    """Per-subcarrier SE of one scheme on the true channel.

    Args:
        combiner: ``"mmse"`` (full-digital MMSE at the UT) or ``"hybrid"``
            (SOMP over the UT-side codebook).

    Returns:
        ``(rates (M,), HybridPrecoder)``.
    """
    hyb, _ = design_precoder(scheme, channel_est_dl, report, cfg)
    f_stack = hyb.stack
    noise = cfg.noise_power
    w = None
    if combiner == "hybrid":
        w = hybrid_combiner(channel_true_dl.data, f_stack, noise, ut_codebook(report, cfg),
                            cfg.n_rf_ut)
    elif combiner != "mmse":
        raise ValueError(f"unknown combiner {combiner!r}")
    _, rates = spectral_efficiency(channel_true_dl, f_stack, noise, w, per_subcarrier=True)
    return rates, hyb
