"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from scipy.special import expit


def steering_matrix(sin_theta, inv_r, offsets, wavelength):
    s = np.asarray(sin_theta, dtype=float)[None, :]
    u = np.asarray(inv_r, dtype=float)[None, :]
    x = np.asarray(offsets, dtype=float)[:, None]
    q = u * u * x * x - 2.0 * u * x * s
    path = (u * x * x - 2.0 * x * s) / (1.0 + np.sqrt(1.0 + q))
    return np.exp(-2j * np.pi / wavelength * path) / np.sqrt(x.shape[0])


def bg_moments(r, sigma, lam, mu, gamma):
    """Element-wise Bernoulli-Gaussian posterior; all inputs broadcast together."""
    lam = np.asarray(lam, dtype=float)
    tot = sigma + gamma
    xi = (sigma * mu + r * gamma) / tot
    zeta = sigma * gamma / tot
    llr = (0.5 * np.log(sigma / tot) + np.abs(r) ** 2 / (2.0 * sigma)
           - np.abs(r - mu) ** 2 / (2.0 * tot))
    with np.errstate(divide="ignore"):
        logit = np.log(lam) - np.log1p(-lam)
    pi = np.where(lam <= 0.0, 0.0, np.where(lam >= 1.0, 1.0, expit(llr + logit)))
    mag = np.abs(xi) ** 2
    mean = pi * xi
    var = np.maximum(pi * (mag + zeta) - pi * pi * mag, 0.0)
    return mean, var, pi, xi, zeta


def bg_denoise(r, sigma, lam, mu, gamma):
    return bg_moments(np.asarray(r), np.asarray(sigma, dtype=float),
                      np.asarray(lam, dtype=float)[:, None],
                      np.asarray(mu, dtype=complex)[None, :],
                      np.asarray(gamma, dtype=float)[None, :])
