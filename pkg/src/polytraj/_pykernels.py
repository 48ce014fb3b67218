"""Reference numpy implementations of the hot kernels.

Signatures match the compiled ``_ckernels`` module exactly; this module is
used when the extension is not built or ``POLYTRAJ_PURE_PYTHON=1`` is set.
"""

import numpy as np

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

BEV_NX = 121
BEV_NY = 21
BEV_HALF_X = 60.5
BEV_HALF_Y = 10.5


def mixture_nll(means, log_sigma, log_pi, gt, axis_weight, with_grad=True):
    """Weighted per-axis mixture NLL summed over axes and steps.

    means, log_sigma: (R, K, 2, T); log_pi: (R, K) normalised log weights;
    gt: (R, 2, T); axis_weight: (2,).

    Returns (loss (R,), d_means, d_log_sigma, d_log_pi); the gradient arrays
    are None when ``with_grad`` is false.
    """
    means = np.asarray(means, dtype=np.float64)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    log_pi = np.asarray(log_pi, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    w = np.asarray(axis_weight, dtype=np.float64)

    inv_sigma = np.exp(-log_sigma)
    z = (gt[:, None, :, :] - means) * inv_sigma
    comp = log_pi[:, :, None, None] - HALF_LOG_2PI - log_sigma - 0.5 * z * z
    peak = comp.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(comp - peak).sum(axis=1))  # (R, 2, T)
    loss = -(w[None, :, None] * lse).sum(axis=(1, 2))
    if not with_grad:
        return loss, None, None, None

    resp = np.exp(comp - lse[:, None])  # (R, K, 2, T)
    wr = resp * w[None, None, :, None]
    d_means = -wr * z * inv_sigma
    d_log_sigma = -wr * (z * z - 1.0)
    d_log_pi = -wr.sum(axis=(2, 3))
    return loss, d_means, d_log_sigma, d_log_pi


def lidar_grid(xy):
    """Bin ego-frame points into the BEV grid.

    Returns (sum_x, sum_y, count), each (121, 21) float64; out-of-range
    points are dropped.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    sx = np.zeros((BEV_NX, BEV_NY))
    sy = np.zeros((BEV_NX, BEV_NY))
    cnt = np.zeros((BEV_NX, BEV_NY))
    if xy.shape[0] == 0:
        return sx, sy, cnt
    fi = np.floor(xy[:, 0] + BEV_HALF_X)
    fj = np.floor(xy[:, 1] + BEV_HALF_Y)
    keep = (fi >= 0) & (fi < BEV_NX) & (fj >= 0) & (fj < BEV_NY)
    if not keep.any():
        return sx, sy, cnt
    flat = fi[keep].astype(np.int64) * BEV_NY + fj[keep].astype(np.int64)
    size = BEV_NX * BEV_NY
    cnt = np.bincount(flat, minlength=size).astype(np.float64).reshape(BEV_NX, BEV_NY)
    sx = np.bincount(flat, weights=xy[keep, 0], minlength=size).reshape(BEV_NX, BEV_NY)
    sy = np.bincount(flat, weights=xy[keep, 1], minlength=size).reshape(BEV_NX, BEV_NY)
    return sx, sy, cnt
