"""Planar poses, tracks, frame changes and zero-constant quartic polynomials."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

POLY_DEGREE = 4
N_COEFFS = 4  # powers 4, 3, 2, 1; the constant term is pinned to zero
POWERS = np.array([4, 3, 2, 1])


class DegenerateInputError(ValueError):
    """Raised when a least-squares fit has a rank-deficient design matrix."""


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]. Values already in range are returned untouched."""
    if -math.pi < a <= math.pi:
        return a
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


def normalize_angles(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.remainder(a + math.pi, 2.0 * math.pi) - math.pi
    out[out <= -math.pi] += 2.0 * math.pi
    inside = (a > -math.pi) & (a <= math.pi)
    out[inside] = a[inside]
    return out


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


def rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def points_to_frame(xy: np.ndarray, reference: Pose2) -> np.ndarray:
    """Express global (n, 2) points in the frame of ``reference``."""
    xy = np.asarray(xy, dtype=float)
    c, s = math.cos(reference.yaw), math.sin(reference.yaw)
    dx = xy[..., 0] - reference.x
    dy = xy[..., 1] - reference.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def points_from_frame(xy: np.ndarray, reference: Pose2) -> np.ndarray:
    """Inverse of :func:`points_to_frame`."""
    xy = np.asarray(xy, dtype=float)
    c, s = math.cos(reference.yaw), math.sin(reference.yaw)
    x = c * xy[..., 0] - s * xy[..., 1] + reference.x
    y = s * xy[..., 0] + c * xy[..., 1] + reference.y
    return np.stack([x, y], axis=-1)


def pose_to_frame(pose: Pose2, reference: Pose2) -> Pose2:
    p = points_to_frame(np.array([pose.x, pose.y]), reference)
    return Pose2(float(p[0]), float(p[1]), pose.yaw - reference.yaw)


def pose_from_frame(pose: Pose2, reference: Pose2) -> Pose2:
    p = points_from_frame(np.array([pose.x, pose.y]), reference)
    return Pose2(float(p[0]), float(p[1]), pose.yaw + reference.yaw)


@dataclass(frozen=True, eq=False)
class Track:
    """Uniformly sampled sequence of poses and speeds.

    Stored column-wise as arrays; ``t`` is in seconds and may be negative for
    past samples (t=0 is the prediction instant).
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    yaw: np.ndarray
    speed: np.ndarray
    sample_rate: float = 10.0

    def __post_init__(self):
        cols = {}
        for name in ("t", "x", "y", "yaw", "speed"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            cols[name] = arr
        n = cols["t"].size
        if any(c.size != n for c in cols.values()):
            raise ValueError("track columns differ in length")
        if n > 1:
            dt = np.diff(cols["t"])
            if np.any(dt <= 0):
                raise ValueError("track timestamps must be strictly increasing")
            if np.max(np.abs(dt - 1.0 / self.sample_rate)) > 1e-9:
                raise ValueError(f"track spacing deviates from 1/{self.sample_rate} s")
        cols["yaw"] = normalize_angles(cols["yaw"])
        cols["yaw"].setflags(write=False)
        for name, arr in cols.items():
            object.__setattr__(self, name, arr)

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, Pose2, float]], sample_rate: float = 10.0) -> "Track":
        samples = list(samples)
        return cls(
            t=[s[0] for s in samples],
            x=[s[1].x for s in samples],
            y=[s[1].y for s in samples],
            yaw=[s[1].yaw for s in samples],
            speed=[s[2] for s in samples],
            sample_rate=sample_rate,
        )

    @classmethod
    def from_positions(cls, xy: np.ndarray, dt: float = 0.1, t0: float = None) -> "Track":
        """Build a track from (n, 2) positions; yaw follows the displacement, speed its norm."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        n = len(xy)
        t0 = dt if t0 is None else t0
        t = t0 + dt * np.arange(n)
        if n > 1:
            d = np.diff(xy, axis=0)
            d = np.vstack([d[:1], d])
        else:
            d = np.zeros((1, 2))
        yaw = np.arctan2(d[:, 1], d[:, 0])
        speed = np.hypot(d[:, 0], d[:, 1]) / dt
        return cls(t, xy[:, 0], xy[:, 1], yaw, speed, sample_rate=1.0 / dt)

    def __len__(self) -> int:
        return int(self.t.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Track):
            return NotImplemented
        return self.sample_rate == other.sample_rate and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("t", "x", "y", "yaw", "speed")
        )

    @property
    def positions(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=-1)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def pose(self, i: int) -> Pose2:
        return Pose2(float(self.x[i]), float(self.y[i]), float(self.yaw[i]))

    def samples(self) -> list[tuple[float, Pose2, float]]:
        return [(float(self.t[i]), self.pose(i), float(self.speed[i])) for i in range(len(self))]

    def shifted(self, dxy: np.ndarray) -> "Track":
        return Track(self.t, self.x + dxy[0], self.y + dxy[1], self.yaw, self.speed, self.sample_rate)

    def slice(self, start: int, stop: int) -> "Track":
        s = slice(start, stop)
        return Track(self.t[s], self.x[s], self.y[s], self.yaw[s], self.speed[s], self.sample_rate)


def to_ego_frame(track: Track, reference: Pose2) -> Track:
    xy = points_to_frame(track.positions, reference)
    return Track(track.t, xy[:, 0], xy[:, 1], track.yaw - reference.yaw, track.speed, track.sample_rate)


def from_ego_frame(track: Track, reference: Pose2) -> Track:
    xy = points_from_frame(track.positions, reference)
    return Track(track.t, xy[:, 0], xy[:, 1], track.yaw + reference.yaw, track.speed, track.sample_rate)


@dataclass(frozen=True)
class PolyCoeffs:
    """Coefficients of mu(t) = a0 t^4 + a1 t^3 + a2 t^2 + a3 t (no constant term)."""

    a: tuple[float, float, float, float]
    axis: str = "x"

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        if len(a) != N_COEFFS:
            raise ValueError(f"expected {N_COEFFS} coefficients, got {len(a)}")
        if self.axis not in ("x", "y"):
            raise ValueError(f"axis must be 'x' or 'y', got {self.axis!r}")
        object.__setattr__(self, "a", a)

    def __call__(self, t):
        return poly_eval(self, t)


def power_basis(times: np.ndarray) -> np.ndarray:
    """(4, n) matrix whose rows are t^4, t^3, t^2, t."""
    times = np.asarray(times, dtype=float)
    return times[None, :] ** POWERS[:, None]


def poly_eval(coeffs: PolyCoeffs | Sequence[float], t):
    a = coeffs.a if isinstance(coeffs, PolyCoeffs) else coeffs
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("polynomial evaluation is defined for t >= 0 only")
    # Horner with the zero constant folded in
    out = (((a[0] * t_arr + a[1]) * t_arr + a[2]) * t_arr + a[3]) * t_arr
    return float(out) if out.ndim == 0 else out


def fit_coeffs(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Least-squares zero-constant quartic fit, vectorised over trailing columns.

    ``values`` has shape (n,) or (n, m); returns (4,) or (4, m).
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    values = np.asarray(values, dtype=float)
    if times.size < N_COEFFS:
        raise DegenerateInputError(f"need at least {N_COEFFS} points, got {times.size}")
    if values.shape[0] != times.size:
        raise ValueError("times and values differ in length")
    if np.any(times <= 0) or not np.all(np.isfinite(times)):
        raise DegenerateInputError("fit times must be finite and strictly positive")
    scale = float(np.max(times))
    # columns scaled to [0, 1] before QR keeps the t^4 column well conditioned
    design = (times / scale)[:, None] ** POWERS[None, :]
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise DegenerateInputError("rank-deficient design matrix (need 4 distinct times)")
    b = np.linalg.solve(r, q.T @ values)
    unscale = scale ** POWERS.astype(float)
    return b / unscale.reshape((-1,) + (1,) * (b.ndim - 1))


def poly_fit(points: Iterable[tuple[float, float]], axis: str = "x") -> PolyCoeffs:
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    a = fit_coeffs(pts[:, 0], pts[:, 1])
    return PolyCoeffs(tuple(a), axis)
