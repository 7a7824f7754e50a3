# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward kernels; same contracts as ``_fallback``."""

import numpy as np
from libc.math cimport exp, sqrt

cdef double VAR_EPS = 1e-9


def layer_fuse(double[:, :, :, ::1] X, double[::1] w):
    cdef Py_ssize_t B = X.shape[0], L = X.shape[1], T = X.shape[2], D = X.shape[3]
    cdef Py_ssize_t bi, l, t, d
    cdef double s, m, z
    if w.shape[0] != D:
        raise ValueError("score vector does not match feature dim")
    alpha_arr = np.empty((B, L, T), dtype=np.float64)
    H_arr = np.zeros((B, T, D), dtype=np.float64)
    cdef double[:, :, ::1] alpha = alpha_arr
    cdef double[:, :, ::1] H = H_arr
    with nogil:
        for bi in range(B):
            for t in range(T):
                m = -1e308
                for l in range(L):
                    s = 0.0
                    for d in range(D):
                        s = s + X[bi, l, t, d] * w[d]
                    alpha[bi, l, t] = s
                    if s > m:
                        m = s
                z = 0.0
                for l in range(L):
                    alpha[bi, l, t] = exp(alpha[bi, l, t] - m)
                    z = z + alpha[bi, l, t]
                for l in range(L):
                    alpha[bi, l, t] = alpha[bi, l, t] / z
                    s = alpha[bi, l, t]
                    for d in range(D):
                        H[bi, t, d] = H[bi, t, d] + s * X[bi, l, t, d]
    return alpha_arr, H_arr


def attentive_stats(double[:, :, ::1] seq, double[::1] w, double b):
    cdef Py_ssize_t B = seq.shape[0], T = seq.shape[1], Hd = seq.shape[2]
    cdef Py_ssize_t bi, t, h
    cdef double s, m, z, x, v
    if w.shape[0] != Hd:
        raise ValueError("attention vector does not match hidden dim")
    a_arr = np.empty((B, T), dtype=np.float64)
    mu_arr = np.zeros((B, Hd), dtype=np.float64)
    m2_arr = np.zeros((B, Hd), dtype=np.float64)
    sd_arr = np.empty((B, Hd), dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] mu = mu_arr
    cdef double[:, ::1] m2 = m2_arr
    cdef double[:, ::1] sd = sd_arr
    with nogil:
        for bi in range(B):
            m = -1e308
            for t in range(T):
                s = b
                for h in range(Hd):
                    s = s + seq[bi, t, h] * w[h]
                a[bi, t] = s
                if s > m:
                    m = s
            z = 0.0
            for t in range(T):
                a[bi, t] = exp(a[bi, t] - m)
                z = z + a[bi, t]
            for t in range(T):
                a[bi, t] = a[bi, t] / z
                s = a[bi, t]
                for h in range(Hd):
                    x = seq[bi, t, h]
                    mu[bi, h] = mu[bi, h] + s * x
                    m2[bi, h] = m2[bi, h] + s * x * x
            for h in range(Hd):
                v = m2[bi, h] - mu[bi, h] * mu[bi, h]
                m2[bi, h] = v
                if v < 0.0:
                    v = 0.0
                sd[bi, h] = sqrt(v + VAR_EPS)
    return a_arr, mu_arr, sd_arr, m2_arr
