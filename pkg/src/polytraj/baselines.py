"""Reference predictors: constant velocity, physics oracle, past-only MLP, benchmark glue."""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from . import bev
from .geometry import N_COEFFS, Track, fit_coeffs
from .mixture import TrajectoryMixture, mode_order
from .net import past_mlp_arch  # noqa: F401  (re-exported: the MLP baseline is a net configuration)

PHYSICS_MODELS = ("constant_velocity", "constant_acceleration", "constant_yaw_rate", "constant_accel_yaw_rate")
ESTIMATION_WINDOW = 1.0  # seconds of past used for rate estimates


def _single(coeffs: np.ndarray, T: int, dt: float, **meta) -> TrajectoryMixture:
    return TrajectoryMixture(np.ones(1), coeffs.reshape(1, 2, N_COEFFS), np.ones((1, 2, T)), dt, dict(meta))


def _last_velocity(track: Track) -> tuple:
    if len(track) < 2:
        return np.zeros(2), True
    pos = track.positions
    return (pos[-1] - pos[-2]) / (track.t[-1] - track.t[-2]), False


def constant_velocity(track: Track, T: int = 40, dt: float = 0.1) -> TrajectoryMixture:
    """Linear extrapolation of the last two samples, as displacement from the last one.

    A single-sample track yields a zero-velocity prediction with
    ``meta["degenerate"] = True``.
    """
    vel, degenerate = _last_velocity(track)
    if degenerate:
        warnings.warn("constant_velocity: single-sample track, predicting zero velocity")
    coeffs = np.zeros((2, N_COEFFS))
    coeffs[:, 3] = vel
    return _single(coeffs, T, dt, degenerate=degenerate, model="constant_velocity")


def _slope(t: np.ndarray, v: np.ndarray) -> float:
    if t.size < 2:
        return 0.0
    A = np.stack([t - t.mean(), np.ones_like(t)], axis=1)
    return float(np.linalg.lstsq(A, v, rcond=None)[0][0])


def _rollout(v0: float, yaw0: float, accel: float, yaw_rate: float, times: np.ndarray, substeps: int = 200) -> np.ndarray:
    """Integrate speed and heading on a fine trapezoid grid and sample positions at ``times``."""
    t_end = float(times[-1])
    n = substeps * len(times)
    grid = np.linspace(0.0, t_end, n + 1)
    if accel < 0 and v0 > 0:
        t_stop = v0 / -accel
        speed = np.where(grid < t_stop, v0 + accel * grid, 0.0)
    else:
        speed = np.maximum(v0 + accel * grid, 0.0)
    heading = yaw0 + yaw_rate * grid
    vx, vy = speed * np.cos(heading), speed * np.sin(heading)
    h = grid[1] - grid[0]
    cx = np.concatenate([[0.0], np.cumsum(0.5 * h * (vx[1:] + vx[:-1]))])
    cy = np.concatenate([[0.0], np.cumsum(0.5 * h * (vy[1:] + vy[:-1]))])
    return np.stack([np.interp(times, grid, cx), np.interp(times, grid, cy)], axis=-1)


def physics_rollouts(track: Track, T: int, dt: float) -> dict:
    """The four kinematic rollouts (displacements from the last sample), keyed by model name."""
    times = dt * np.arange(1, T + 1)
    vel, _ = _last_velocity(track)
    out = {"constant_velocity": vel[None, :] * times[:, None]}
    accel, yaw_rate = physics_rate_estimates(track)
    v0 = float(track.speed[-1])
    yaw0 = float(track.yaw[-1])
    out["constant_acceleration"] = _rollout(v0, yaw0, accel, 0.0, times)
    out["constant_yaw_rate"] = _rollout(v0, yaw0, 0.0, yaw_rate, times)
    out["constant_accel_yaw_rate"] = _rollout(v0, yaw0, accel, yaw_rate, times)
    return out


def physics_oracle(track: Track, gt_future, T: int = 40, dt: float = 0.1) -> TrajectoryMixture:
    """Best of the four kinematic rollouts against the ground truth (ADE of the fitted polynomial).

    ``gt_future`` holds future positions as displacements from the last past
    sample, either a (T, 2) array or a Track.
    """
    gt = gt_future.positions if isinstance(gt_future, Track) else np.asarray(gt_future, dtype=float)
    gt = gt[:T]
    if gt.shape[0] != T:
        raise ValueError(f"ground truth has {gt.shape[0]} steps, expected {T}")
    times = dt * np.arange(1, T + 1)
    best = None
    for name, path in physics_rollouts(track, T, dt).items():
        coeffs = fit_coeffs(times, path).T  # (2, 4)
        fitted = (coeffs @ (times[None, :] ** np.array([4, 3, 2, 1])[:, None])).T
        ade = float(np.linalg.norm(fitted - gt, axis=1).mean())
        if best is None or ade < best[0]:
            best = (ade, name, coeffs)
    return _single(best[2], T, dt, model=best[1], model_index=PHYSICS_MODELS.index(best[1]), ade=best[0])


def in_bev_range(position) -> bool:
    x, y = float(position[0]), float(position[1])
    return -bev.HALF_X <= x < bev.HALF_X and -bev.HALF_Y <= y < bev.HALF_Y


def rank_and_fallback(
    mixtures: Sequence[TrajectoryMixture],
    positions: Sequence,
    pasts: Sequence[Track],
    top_k: int,
) -> list[np.ndarray]:
    """Benchmark submission: per agent, up to ``top_k`` mean paths ranked by weight.

    Agents whose current ego-frame position lies outside the BEV range get the
    constant-velocity path instead of the model output.
    """
    out = []
    for m, pos, past in zip(mixtures, positions, pasts):
        if not in_bev_range(pos):
            m = constant_velocity(past, m.T, m.dt)
        order = mode_order(m.pi)[: max(1, min(top_k, m.K))]
        out.append(m.means()[order])
    return out


def physics_rate_estimates(track: Track) -> tuple:
    """(acceleration, yaw rate) least-squares estimates over the estimation window."""
    n_win = min(len(track), int(round(ESTIMATION_WINDOW / track.dt)) + 1)
    return _slope(track.t[-n_win:], track.speed[-n_win:]), _slope(track.t[-n_win:], np.unwrap(track.yaw[-n_win:]))

