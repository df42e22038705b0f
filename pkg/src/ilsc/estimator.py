"""Sparse recovery of the projected channel: damped AMP with EM learning, and OMP.

Both solvers work on a stack of sensing matrices ``A[m]`` of shape
``(M, P, K)`` and measurements ``Y[m]`` of shape ``(M, P, N)``. The
measurements are divided by their RMS internally so the solver tolerances
are scale free; outputs are returned in the original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kernels import python_backend
from .channel import ChannelTensor
from .dictionary import PolarDictionary
from .pilots import MeasurementSet, PilotFrame

NOISE_FLOOR = 1e-12


class AmpDivergedError(RuntimeError):
    """Raised when AMP messages become non-finite.

    Attributes:
        last_estimate: posterior means ``(M, K, N)`` from the last sweep in
            which every message was finite, in the caller's units.
        iteration: index of the failing sweep.
    """

    def __init__(self, message: str, last_estimate: np.ndarray, iteration: int):
        super().__init__(message)
        self.last_estimate = last_estimate
        self.iteration = iteration


@dataclass
class BernoulliGaussianPrior:
    """Spike-and-slab prior: zero with prob ``1 - lam``, else ``CN(mu, gamma)``."""

    lam: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray


@dataclass
class SparseChannelEstimate:
    """Projected-domain estimate for every subcarrier.

    Attributes:
        coeffs: ``(M, K, N_UT)`` posterior means.
        noise_var: ``(M,)`` learned effective noise variance per subcarrier.
        support_prob: ``(K,)`` shared non-zero probability.
        method: solver tag.
        iterations: sweeps or greedy rounds run.
        hyper: extra learned quantities (JSON-friendly after ``to_sidecar``).
    """

    coeffs: np.ndarray
    noise_var: np.ndarray
    support_prob: np.ndarray
    method: str
    iterations: int = 0
    hyper: dict = field(default_factory=dict)

    @property
    def m_subcarriers(self) -> int:
        return self.coeffs.shape[0]

    def energy_per_atom(self) -> np.ndarray:
        """Energy of each dictionary row summed over UT antennas and subcarriers."""
        return np.sum(np.abs(self.coeffs) ** 2, axis=(0, 2))

    def to_sidecar(self) -> dict:
        out = {
            "method": self.method,
            "iterations": int(self.iterations),
            "noise_var": [float(v) for v in self.noise_var],
            "support_prob": [float(v) for v in self.support_prob],
        }
        for k, v in self.hyper.items():
            arr = np.asarray(v)
            if np.iscomplexobj(arr):
                out[k] = {"re": arr.real.tolist(), "im": arr.imag.tolist()}
            else:
                out[k] = arr.tolist()
        return out


def bg_denoiser(r, sigma, prior: BernoulliGaussianPrior):
    """Scalar-or-array Bernoulli-Gaussian posterior moments.

    Args:
        r: pseudo-observation(s).
        sigma: pseudo-noise variance(s), strictly positive.
        prior: spike-and-slab parameters, broadcast against ``r``.

    Returns:
        ``(mean, var, pi)`` with ``pi`` the posterior non-zero probability.
    """
    r = np.asarray(r, dtype=complex)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("pseudo-noise variance must be positive")
    mean, var, pi, _, _ = python_backend.bg_moments(
        r, sigma, prior.lam, np.asarray(prior.mu, dtype=complex), np.asarray(prior.gamma, dtype=float))
    if np.ndim(mean) == 0:
        return complex(mean), float(var), float(pi)
    return mean, var, pi


@dataclass
class AmpResult:
    mean: np.ndarray
    var: np.ndarray
    pi: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    noise_var: np.ndarray
    iterations: int
    last_change: float
    change_trace: list


def amp_em_core(a: np.ndarray, y: np.ndarray, t_iter: int = 100, damping: float = 0.8,
                tol: float = 0.0, init_snr_db: float = 10.0) -> AmpResult:
    """Damped AMP with EM hyper-parameter learning on stacked problems.

    Args:
        a: ``(M, P, K)`` sensing matrices (may be a broadcast view).
        y: ``(M, P, N)`` measurements.
        t_iter: maximum number of sweeps.
        damping: weight ``eps`` on the previous factor messages.
        tol: stop early once the largest change of the posterior mean,
            relative to its largest magnitude, drops below this. ``0``
            always runs ``t_iter`` sweeps.
        init_snr_db: SNR assumed when initialising the noise variance.

    Returns:
        AmpResult in the units of ``y``.

    Raises:
        AmpDivergedError: a message became non-finite.
    """
    if t_iter < 1:
        raise ValueError("t_iter must be >= 1")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    a = np.asarray(a)
    y = np.asarray(y, dtype=complex)
    m_sub, p_len, k_cols = a.shape
    n_col = y.shape[2]
    if y.shape[:2] != (m_sub, p_len):
        raise ValueError(f"measurement shape {y.shape} does not match sensing stack {a.shape}")

    scale = math.sqrt(float(np.mean(np.abs(y) ** 2)))
    if scale == 0.0:
        zeros = np.zeros((m_sub, k_cols, n_col), dtype=complex)
        return AmpResult(zeros, np.zeros(zeros.shape), np.zeros(zeros.shape), np.zeros(k_cols),
                         np.zeros((m_sub, n_col), complex), np.zeros((m_sub, n_col)),
                         np.zeros(m_sub), 0, 0.0, [])
    y = y / scale
    a_h = np.ascontiguousarray(np.conj(np.swapaxes(a, 1, 2)))
    a2 = np.abs(a) ** 2
    a2_t = np.ascontiguousarray(np.swapaxes(a2, 1, 2))

    # initial hyper-parameters
    energy = 1.0
    noise0 = energy / (1 + 10 ** (init_snr_db / 10))
    lam = np.full(k_cols, min(0.1 * p_len / k_cols, 1.0))
    row_energy = float(np.sum(a2)) / (m_sub * p_len)
    gamma = np.full((m_sub, n_col), max(energy - noise0, 1e-6) / (lam[0] * row_energy))
    mu = np.zeros((m_sub, n_col), dtype=complex)
    sigma2 = np.full(m_sub, noise0)

    hhat = np.broadcast_to(mu[:, None, :], (m_sub, k_cols, n_col)).copy()
    vhat = np.broadcast_to(gamma[:, None, :], (m_sub, k_cols, n_col)).copy()
    v_prev = np.ones((m_sub, p_len, n_col))
    z_prev = y.copy()
    pi = np.zeros_like(vhat)
    trace = []
    change = math.inf
    it = 0
    for it in range(1, t_iter + 1):
        s2 = sigma2[:, None, None]
        v_new = a2 @ vhat
        z_new = a @ hhat - v_new / (s2 + v_prev) * (y - z_prev)
        v = damping * v_prev + (1 - damping) * v_new
        z = damping * z_prev + (1 - damping) * z_new
        inv = 1.0 / (s2 + v)
        big_sigma = 1.0 / (a2_t @ inv)
        r = hhat + big_sigma * (a_h @ ((y - z) * inv))

        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(big_sigma))):
            raise AmpDivergedError(f"non-finite AMP messages at sweep {it}", hhat * scale, it)

        new_mean = np.empty_like(hhat)
        new_var = np.empty_like(vhat)
        xi = np.empty_like(hhat)
        zeta = np.empty_like(vhat)
        for m in range(m_sub):
            out = kernels.bg_denoise(np.ascontiguousarray(r[m]), np.ascontiguousarray(big_sigma[m]),
                                     lam, np.ascontiguousarray(mu[m]), np.ascontiguousarray(gamma[m]))
            new_mean[m], new_var[m], pi[m], xi[m], zeta[m] = out

        # EM updates
        pi_sum = np.maximum(np.sum(pi, axis=1), 1e-300)
        mu_next = np.sum(pi * xi, axis=1) / pi_sum
        gamma = np.maximum(np.sum(pi * (np.abs(mu[:, None, :] - xi) ** 2 + zeta), axis=1) / pi_sum,
                           1e-12)
        mu = mu_next
        lam = np.mean(pi, axis=(0, 2))
        resid = np.abs(y - z) ** 2
        s2 = sigma2[:, None, None]
        sigma2 = np.mean(resid / np.abs(1 + v / s2) ** 2 + s2 * v / (s2 + v), axis=(1, 2))
        sigma2 = np.maximum(sigma2, NOISE_FLOOR)

        if not np.all(np.isfinite(new_mean)):
            raise AmpDivergedError(f"non-finite posterior at sweep {it}", hhat * scale, it)
        peak = float(np.max(np.abs(new_mean))) if new_mean.size else 0.0
        change = float(np.max(np.abs(new_mean - hhat))) / max(peak, 1e-300)
        trace.append(change)
        hhat, vhat = new_mean, new_var
        v_prev, z_prev = v, z
        if tol > 0 and change < tol:
            break

    return AmpResult(hhat * scale, vhat * scale ** 2, pi, lam, mu * scale, gamma * scale ** 2,
                     sigma2 * scale ** 2, it, change, trace)


def sensing_stack(frame: PilotFrame, dictionary: PolarDictionary) -> np.ndarray:
    """``A[m] = W^H Phi[m]`` for every subcarrier, shape ``(M, P, K)``.

    Dictionaries whose matrix does not vary with ``m`` return a broadcast
    view of a single product.
    """
    wh = frame.w_ul.conj().T
    m_sub = dictionary.m_subcarriers
    if len(np.unique(dictionary.wavelengths)) == 1:
        single = wh @ dictionary.matrix(0)
        return np.broadcast_to(single, (m_sub,) + single.shape)
    return np.stack([wh @ dictionary.matrix(m) for m in range(m_sub)])


def amp_em_estimate(measurements: MeasurementSet, dictionary: PolarDictionary, frame: PilotFrame,
                    t_iter: int = 100, damping: float = 0.8, tol: float = 0.0,
                    init_snr_db: float = 10.0) -> SparseChannelEstimate:
    """Run AMP-EM over all subcarriers jointly and package the result."""
    a = sensing_stack(frame, dictionary)
    res = amp_em_core(a, measurements.y, t_iter=t_iter, damping=damping, tol=tol,
                      init_snr_db=init_snr_db)
    return SparseChannelEstimate(
        coeffs=res.mean,
        noise_var=res.noise_var,
        support_prob=res.lam,
        method=f"amp-{dictionary.variant}",
        iterations=res.iterations,
        hyper={"mu": res.mu, "gamma": res.gamma, "last_change": res.last_change},
    )


def omp_core(a: np.ndarray, y: np.ndarray, k_sparse: int):
    """Joint-support OMP over subcarriers and columns.

    Each round picks the atom with the largest correlation energy summed
    over ``m`` and ``n`` (normalised by the atom norm; ties go to the lowest
    index), then refits every subcarrier by least squares on the support.

    Returns:
        ``(coeffs (M, K, N), support list, residual (M, P, N))``.
    """
    a = np.asarray(a)
    y = np.asarray(y, dtype=complex)
    m_sub, p_len, k_cols = a.shape
    if k_sparse < 1:
        raise ValueError("sparsity must be >= 1")
    if k_sparse > p_len or k_sparse > k_cols:
        raise ValueError(f"sparsity {k_sparse} exceeds measurement length {p_len} or atoms {k_cols}")
    a_h = np.conj(np.swapaxes(a, 1, 2))
    norms2 = np.maximum(np.sum(np.abs(a) ** 2, axis=1), 1e-300)  # (M, K)
    support: list[int] = []
    resid = y.copy()
    coef_s = np.zeros((m_sub, 0, y.shape[2]), dtype=complex)
    for _ in range(k_sparse):
        corr = np.abs(a_h @ resid) ** 2
        score = np.sum(np.sum(corr, axis=2) / norms2, axis=0)
        score[support] = -np.inf
        support.append(int(np.argmax(score)))
        sub = a[:, :, support]
        coef_s = np.stack([np.linalg.lstsq(sub[m], y[m], rcond=None)[0] for m in range(m_sub)])
        resid = y - sub @ coef_s
    coeffs = np.zeros((m_sub, k_cols, y.shape[2]), dtype=complex)
    coeffs[:, support, :] = coef_s
    return coeffs, support, resid


def omp_estimate(measurements: MeasurementSet, dictionary: PolarDictionary, frame: PilotFrame,
                 k_sparse: int) -> SparseChannelEstimate:
    a = sensing_stack(frame, dictionary)
    coeffs, support, resid = omp_core(a, measurements.y, k_sparse)
    noise = np.mean(np.abs(resid) ** 2, axis=(1, 2))
    lam = np.zeros(coeffs.shape[1])
    lam[support] = 1.0
    return SparseChannelEstimate(coeffs, noise, lam, f"omp-{dictionary.variant}", k_sparse,
                                 hyper={"support": np.array(support)})


def reconstruct_spatial(estimate: SparseChannelEstimate, dictionary: PolarDictionary) -> ChannelTensor:
    """Map the projected estimate back to antenna space: ``Phi[m] @ H^P[m]``."""
    coeffs = estimate.coeffs
    if coeffs.shape[0] != dictionary.m_subcarriers or coeffs.shape[1] != dictionary.n_columns:
        raise ValueError(
            f"estimate shape {coeffs.shape} does not match dictionary "
            f"({dictionary.m_subcarriers}, {dictionary.n_columns}, .)")
    out = np.empty((coeffs.shape[0], dictionary.n_bs, coeffs.shape[2]), dtype=complex)
    for m in range(coeffs.shape[0]):
        nz = np.flatnonzero(np.any(coeffs[m] != 0, axis=1))
        if len(nz) < coeffs.shape[1] // 4:
            out[m] = dictionary.matrix(m)[:, nz] @ coeffs[m, nz]
        else:
            out[m] = dictionary.matrix(m) @ coeffs[m]
    return ChannelTensor(out, "uplink")
