# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; see ``_pykernels`` for the contract."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, floor

cnp.import_array()

cdef double HALF_LOG_2PI = 0.91893853320467274178
cdef int BEV_NX = 121
cdef int BEV_NY = 21
cdef double BEV_HALF_X = 60.5
cdef double BEV_HALF_Y = 10.5


def mixture_nll(means, log_sigma, log_pi, gt, axis_weight, bint with_grad=True):
    cdef double[:, :, :, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[:, :, :, ::1] ls = np.ascontiguousarray(log_sigma, dtype=np.float64)
    cdef double[:, ::1] lp = np.ascontiguousarray(log_pi, dtype=np.float64)
    cdef double[:, :, ::1] g = np.ascontiguousarray(gt, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(axis_weight, dtype=np.float64)

    cdef Py_ssize_t R = mu.shape[0], K = mu.shape[1], A = mu.shape[2], T = mu.shape[3]
    cdef Py_ssize_t r, k, a, t

    loss_arr = np.zeros(R)
    cdef double[::1] loss = loss_arr
    cdef double[:, :, :, ::1] dmu
    cdef double[:, :, :, ::1] dls
    cdef double[:, ::1] dlp
    if with_grad:
        dmu_arr = np.empty((R, K, A, T))
        dls_arr = np.empty((R, K, A, T))
        dlp_arr = np.zeros((R, K))
        dmu = dmu_arr
        dls = dls_arr
        dlp = dlp_arr

    comp_arr = np.empty(K)
    zs_arr = np.empty(K)
    invs_arr = np.empty(K)
    cdef double[::1] comp = comp_arr
    cdef double[::1] zs = zs_arr
    cdef double[::1] invs = invs_arr
    cdef double peak, acc, z, inv, resp, wa

    for r in range(R):
        for a in range(A):
            wa = w[a]
            for t in range(T):
                peak = -1e308
                for k in range(K):
                    inv = exp(-ls[r, k, a, t])
                    z = (g[r, a, t] - mu[r, k, a, t]) * inv
                    zs[k] = z
                    invs[k] = inv
                    comp[k] = lp[r, k] - HALF_LOG_2PI - ls[r, k, a, t] - 0.5 * z * z
                    if comp[k] > peak:
                        peak = comp[k]
                acc = 0.0
                for k in range(K):
                    comp[k] = exp(comp[k] - peak)  # reused as unnormalised responsibility
                    acc += comp[k]
                loss[r] -= wa * (peak + log(acc))
                if with_grad:
                    for k in range(K):
                        resp = wa * comp[k] / acc
                        z = zs[k]
                        dmu[r, k, a, t] = -resp * z * invs[k]
                        dls[r, k, a, t] = -resp * (z * z - 1.0)
                        dlp[r, k] -= resp
    if with_grad:
        return loss_arr, dmu_arr, dls_arr, dlp_arr
    return loss_arr, None, None, None


def lidar_grid(xy):
    cdef double[:, ::1] p = np.ascontiguousarray(np.asarray(xy, dtype=np.float64).reshape(-1, 2))
    sx_arr = np.zeros((BEV_NX, BEV_NY))
    sy_arr = np.zeros((BEV_NX, BEV_NY))
    cnt_arr = np.zeros((BEV_NX, BEV_NY))
    cdef double[:, ::1] sx = sx_arr
    cdef double[:, ::1] sy = sy_arr
    cdef double[:, ::1] cnt = cnt_arr
    cdef Py_ssize_t n = p.shape[0], m
    cdef double fi, fj
    cdef int i, j
    for m in range(n):
        fi = floor(p[m, 0] + BEV_HALF_X)
        fj = floor(p[m, 1] + BEV_HALF_Y)
        if fi < 0 or fi >= BEV_NX or fj < 0 or fj >= BEV_NY:
            continue
        i = <int>fi
        j = <int>fj
        cnt[i, j] += 1.0
        sx[i, j] += p[m, 0]
        sy[i, j] += p[m, 1]
    return sx_arr, sy_arr, cnt_arr
