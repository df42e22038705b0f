# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, cos, sin, M_PI

cnp.import_array()


def steering_matrix(const double[::1] sin_theta, const double[::1] inv_r,
                    const double[::1] offsets, double wavelength):
    cdef Py_ssize_t n_ant = offsets.shape[0]
    cdef Py_ssize_t n_col = sin_theta.shape[0]
    if inv_r.shape[0] != n_col:
        raise ValueError("sin_theta and inv_r must have equal length")
    out = np.empty((n_ant, n_col), dtype=np.complex128)
    cdef double complex[:, ::1] res = out
    cdef double k = 2.0 * M_PI / wavelength
    cdef double norm = 1.0 / sqrt(<double>n_ant)
    cdef Py_ssize_t i, j
    cdef double s, u, x, q, path, ph
    for j in range(n_col):
        s = sin_theta[j]
        u = inv_r[j]
        for i in range(n_ant):
            x = offsets[i]
            q = u * u * x * x - 2.0 * u * x * s
            path = (u * x * x - 2.0 * x * s) / (1.0 + sqrt(1.0 + q))
            ph = -k * path
            res[i, j] = norm * (cos(ph) + 1j * sin(ph))
    return out


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def bg_denoise(const double complex[:, ::1] r, const double[:, ::1] sigma,
               const double[::1] lam, const double complex[::1] mu,
               const double[::1] gamma):
    cdef Py_ssize_t n_row = r.shape[0]
    cdef Py_ssize_t n_col = r.shape[1]
    mean_a = np.empty((n_row, n_col), dtype=np.complex128)
    var_a = np.empty((n_row, n_col), dtype=np.float64)
    pi_a = np.empty((n_row, n_col), dtype=np.float64)
    xi_a = np.empty((n_row, n_col), dtype=np.complex128)
    zeta_a = np.empty((n_row, n_col), dtype=np.float64)
    cdef double complex[:, ::1] mean = mean_a
    cdef double[:, ::1] var = var_a
    cdef double[:, ::1] pi = pi_a
    cdef double complex[:, ::1] xi = xi_a
    cdef double[:, ::1] zeta = zeta_a
    cdef Py_ssize_t i, j
    cdef double sg, g, lk, tot, llr, p, ze, v, logit
    cdef double complex rr, m, xv, d
    with nogil:
        for i in range(n_row):
            lk = lam[i]
            if lk > 0.0 and lk < 1.0:
                logit = log(lk) - log(1.0 - lk)
            for j in range(n_col):
                rr = r[i, j]
                sg = sigma[i, j]
                g = gamma[j]
                m = mu[j]
                tot = sg + g
                xv = (sg * m + rr * g) / tot
                ze = sg * g / tot
                d = rr - m
                if lk <= 0.0:
                    p = 0.0
                elif lk >= 1.0:
                    p = 1.0
                else:
                    llr = (0.5 * log(sg / tot)
                           + (rr.real * rr.real + rr.imag * rr.imag) / (2.0 * sg)
                           - (d.real * d.real + d.imag * d.imag) / (2.0 * tot))
                    p = _sigmoid(llr + logit)
                mean[i, j] = p * xv
                v = p * (xv.real * xv.real + xv.imag * xv.imag + ze) - (
                    p * p * (xv.real * xv.real + xv.imag * xv.imag))
                var[i, j] = v if v > 0.0 else 0.0
                pi[i, j] = p
                xi[i, j] = xv
                zeta[i, j] = ze
    return mean_a, var_a, pi_a, xi_a, zeta_a
