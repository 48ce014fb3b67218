"""Bird-eye-view input grid.

A frame is a (121, 21, 5) array over 1 m cells spanning x in [-60.5, 60.5)
and y in [-10.5, 10.5) of the ego frame. Channels are mean x, mean y, state
code, class code and lidar point count. Twenty frames stacked oldest first
form the network input tensor.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from . import kernels
from .geometry import Pose2, points_to_frame

NX, NY, NCH = 121, 21, 5
HALF_X, HALF_Y = 60.5, 10.5
N_FRAMES = 20
CH_X, CH_Y, CH_STATE, CH_CLASS, CH_COUNT = range(NCH)
GROUND_Z = 0.3
BEV_MAGIC = b"BEV1"


class State(IntEnum):
    NONE = 0
    PARKED = 1
    STOPPED = 2
    DYNAMIC = 3


class VehicleClass(IntEnum):
    NONE = 0
    TWO_WHEELER = 1
    CAR = 2
    TRUCK = 3


# (length, width) per class, metres
FOOTPRINT = {
    VehicleClass.TWO_WHEELER: (2.0, 0.8),
    VehicleClass.CAR: (4.5, 1.8),
    VehicleClass.TRUCK: (10.0, 2.5),
}


def footprint_corners(pose: Pose2, cls: int) -> np.ndarray:
    """Four corners (front-left, front-right, rear-right, rear-left) of a box centred on ``pose``."""
    length, width = FOOTPRINT[VehicleClass(cls)]
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return np.stack([pose.x + c * local[:, 0] - s * local[:, 1], pose.y + s * local[:, 0] + c * local[:, 1]], axis=-1)


@dataclass
class Detection:
    pose: Pose2
    corners: np.ndarray  # (4, 2) global
    state: int
    cls: int


@dataclass
class Snapshot:
    """Scene content at one instant, all in the global frame."""

    detections: list = field(default_factory=list)
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))


def cell_index(x: float, y: float):
    i = math.floor(x + HALF_X)
    j = math.floor(y + HALF_Y)
    if 0 <= i < NX and 0 <= j < NY:
        return i, j
    return None


def rasterize_frame(detections: Sequence[Detection], points, ego: Pose2, ground_z: float = GROUND_Z) -> np.ndarray:
    """Rasterize one snapshot into the ego frame.

    Lidar points at or above ``ground_z`` add to the cell count and set the
    cell position to their mean. Vehicle centres and corners then overwrite
    position, state and class of the cells they fall in (corners first, centre
    last; later detections win). Anything outside the grid is dropped.
    """
    frame = np.zeros((NX, NY, NCH))
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    pts = pts[pts[:, 2] >= ground_z]
    if pts.shape[0]:
        xy = points_to_frame(pts[:, :2], ego)
        sx, sy, cnt = kernels.lidar_grid(xy)
        hit = cnt > 0
        frame[..., CH_COUNT] = cnt
        frame[hit, CH_X] = sx[hit] / cnt[hit]
        frame[hit, CH_Y] = sy[hit] / cnt[hit]
    for det in detections:
        anchors = np.vstack([np.asarray(det.corners, dtype=float).reshape(4, 2), [[det.pose.x, det.pose.y]]])
        for px, py in points_to_frame(anchors, ego):
            cell = cell_index(px, py)
            if cell is None:
                continue
            frame[cell[0], cell[1], CH_X] = px
            frame[cell[0], cell[1], CH_Y] = py
            frame[cell[0], cell[1], CH_STATE] = det.state
            frame[cell[0], cell[1], CH_CLASS] = det.cls
    return frame


def accumulate(history: Sequence[Snapshot], ego_now: Pose2, ground_z: float = GROUND_Z) -> np.ndarray:
    """Stack the last 20 snapshots (oldest first), all rasterized in the current ego frame."""
    if len(history) != N_FRAMES:
        raise ValueError(f"need exactly {N_FRAMES} snapshots, got {len(history)}; pad with pad_history()")
    return np.stack([rasterize_frame(s.detections, s.points, ego_now, ground_z) for s in history])


def pad_history(history: Sequence[Snapshot]) -> tuple[list, bool]:
    """Left-pad a short history by repeating its oldest snapshot. Returns (history, padded)."""
    history = list(history)[-N_FRAMES:]
    if not history:
        raise ValueError("cannot pad an empty history")
    padded = len(history) < N_FRAMES
    return [history[0]] * (N_FRAMES - len(history)) + history, padded


def pool(tensor: np.ndarray, out_x: int = 12, out_y: int = 7) -> np.ndarray:
    """Average-pool every frame to an (out_x, out_y) grid using near-equal bins."""
    bx = np.array_split(np.arange(NX), out_x)
    by = np.array_split(np.arange(NY), out_y)
    sx = np.add.reduceat(tensor, [b[0] for b in bx], axis=1)
    sxy = np.add.reduceat(sx, [b[0] for b in by], axis=2)
    counts = np.outer([len(b) for b in bx], [len(b) for b in by])
    return sxy / counts[None, :, :, None]


def dump(tensor: np.ndarray, path) -> None:
    tensor = np.asarray(tensor)
    if tensor.shape != (N_FRAMES, NX, NY, NCH):
        raise ValueError(f"BEV tensor must be {(N_FRAMES, NX, NY, NCH)}, got {tensor.shape}")
    with open(path, "wb") as fh:
        fh.write(BEV_MAGIC + struct.pack("<3I", N_FRAMES, NX, NY))
        fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != BEV_MAGIC:
        raise ValueError("not a BEV1 file")
    dims = struct.unpack("<3I", raw[4:16])
    expected = dims[0] * dims[1] * dims[2] * NCH * 4
    if len(raw) - 16 != expected:
        raise ValueError(f"BEV payload is {len(raw) - 16} bytes, expected {expected}")
    return np.frombuffer(raw[16:], dtype="<f4").reshape(*dims, NCH).copy()
