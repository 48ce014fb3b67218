"""Scenario logs, the ``plop-scn/1`` file format, synthetic scenes and sample cutting.

File format: line-delimited JSON. The first line is a header::

    {"format": "plop-scn/1", "id": "...", "dt": 0.1, "frames": N, "meta": {...}}

followed by one line per frame::

    {"t": 0.0, "ego": {"x":..,"y":..,"yaw":..,"speed":..}, "command": "follow",
     "neighbors": [{"id": 1, "x":..,"y":..,"yaw":..,"speed":..,"class": "car",
                    "state": "dynamic"}, ...],
     "points": [[x, y, z], ...]}

``points`` may be omitted. Unknown keys are ignored.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path as FsPath
from typing import Optional, Sequence

import numpy as np

from . import bev
from .bev import State, VehicleClass
from .geometry import Pose2, Track, points_to_frame, pose_to_frame

FORMAT = "plop-scn/1"
DT = 0.1
EGO_PAST = 20  # past intervals: 21 poses from t=-2.0 s to t=0
NEIGHBOR_PAST = 10
HORIZON = 40
MAX_NEIGHBORS = 10
JUNCTION_RADIUS = 15.0
KINDS = ("straight", "turn90", "fork", "roundabout", "stop_and_go")

WHEELBASE = 2.7
MAX_STEER = 0.6


class NavCommand(Enum):
    FOLLOW = "follow"
    LEFT = "left"
    STRAIGHT = "straight"
    RIGHT = "right"

    @property
    def index(self) -> int:
        return list(NavCommand).index(self)


CLASS_NAMES = {VehicleClass.TWO_WHEELER: "two_wheeler", VehicleClass.CAR: "car", VehicleClass.TRUCK: "truck"}
STATE_NAMES = {State.PARKED: "parked", State.STOPPED: "stopped", State.DYNAMIC: "dynamic"}
_CLASS_BY_NAME = {v: k for k, v in CLASS_NAMES.items()}
_STATE_BY_NAME = {v: k for k, v in STATE_NAMES.items()}


class ScenarioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NeighborState:
    id: int
    pose: Pose2
    speed: float
    cls: int = VehicleClass.CAR
    state: int = State.DYNAMIC


@dataclass(frozen=True)
class Frame:
    t: float
    ego: Pose2
    speed: float
    command: NavCommand = NavCommand.FOLLOW
    neighbors: tuple = ()
    points: Optional[tuple] = None

    def neighbor(self, nid: int) -> Optional[NeighborState]:
        for n in self.neighbors:
            if n.id == nid:
                return n
        return None

    def snapshot(self) -> bev.Snapshot:
        dets = [bev.Detection(n.pose, bev.footprint_corners(n.pose, n.cls), n.state, n.cls) for n in self.neighbors]
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3) if self.points else np.zeros((0, 3))
        return bev.Snapshot(dets, pts)


@dataclass
class ScenarioLog:
    id: str
    frames: list
    dt: float = DT
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    def validate(self) -> None:
        _validate_frames(self.frames, self.dt)

    def expert_track(self) -> Track:
        return Track(
            [f.t for f in self.frames],
            [f.ego.x for f in self.frames],
            [f.ego.y for f in self.frames],
            [f.ego.yaw for f in self.frames],
            [f.speed for f in self.frames],
            sample_rate=1.0 / self.dt,
        )


# --- serialization ---------------------------------------------------------


def _frame_to_dict(f: Frame) -> dict:
    d = {
        "t": f.t,
        "ego": {"x": f.ego.x, "y": f.ego.y, "yaw": f.ego.yaw, "speed": f.speed},
        "command": f.command.value,
        "neighbors": [
            {
                "id": n.id,
                "x": n.pose.x,
                "y": n.pose.y,
                "yaw": n.pose.yaw,
                "speed": n.speed,
                "class": CLASS_NAMES[VehicleClass(n.cls)],
                "state": STATE_NAMES[State(n.state)],
            }
            for n in f.neighbors
        ],
    }
    if f.points is not None:
        d["points"] = [list(p) for p in f.points]
    return d


def dumps_scenario(log: ScenarioLog) -> str:
    """Canonical text form: fixed key order, shortest round-trip float repr."""
    header = {"format": FORMAT, "id": log.id, "dt": log.dt, "frames": len(log.frames), "meta": log.meta}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(_frame_to_dict(f), separators=(",", ":")) for f in log.frames]
    return "\n".join(lines) + "\n"


def write_scenario(log: ScenarioLog, path) -> None:
    FsPath(path).write_text(dumps_scenario(log))


def _num(d: dict, key: str, lineno: int) -> float:
    try:
        v = d[key]
    except KeyError:
        raise ScenarioFormatError(f"line {lineno}: missing field {key!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScenarioFormatError(f"line {lineno}: field {key!r} must be a finite number")
    return float(v)


def _parse_frame(d: dict, lineno: int) -> Frame:
    if not isinstance(d, dict):
        raise ScenarioFormatError(f"line {lineno}: frame must be a JSON object")
    ego = d.get("ego")
    if not isinstance(ego, dict):
        raise ScenarioFormatError(f"line {lineno}: missing ego object")
    try:
        command = NavCommand(d.get("command", "follow"))
    except ValueError:
        raise ScenarioFormatError(f"line {lineno}: unknown command {d.get('command')!r}") from None
    neighbors = []
    for n in d.get("neighbors", []):
        if not isinstance(n, dict) or "id" not in n:
            raise ScenarioFormatError(f"line {lineno}: malformed neighbor entry")
        try:
            cls = _CLASS_BY_NAME[n.get("class", "car")]
            state = _STATE_BY_NAME[n.get("state", "dynamic")]
        except KeyError as exc:
            raise ScenarioFormatError(f"line {lineno}: unknown neighbor class/state {exc}") from None
        neighbors.append(
            NeighborState(
                int(n["id"]),
                Pose2(_num(n, "x", lineno), _num(n, "y", lineno), _num(n, "yaw", lineno)),
                _num(n, "speed", lineno),
                cls,
                state,
            )
        )
    points = None
    if "points" in d:
        try:
            points = tuple((float(p[0]), float(p[1]), float(p[2])) for p in d["points"])
        except (TypeError, IndexError, ValueError):
            raise ScenarioFormatError(f"line {lineno}: points must be [x, y, z] triples") from None
    return Frame(
        _num(d, "t", lineno),
        Pose2(_num(ego, "x", lineno), _num(ego, "y", lineno), _num(ego, "yaw", lineno)),
        _num(ego, "speed", lineno),
        command,
        tuple(neighbors),
        points,
    )


def _validate_frames(frames: Sequence[Frame], dt: float, first_line: int = 2) -> None:
    if abs(dt - DT) > 1e-12:
        raise ScenarioFormatError(f"dt must be {DT} s, got {dt}")
    seen_ended: set = set()
    classes: dict = {}
    prev_ids: set = set()
    for i, f in enumerate(frames):
        if i > 0:
            expected = frames[0].t + i * dt
            if abs(f.t - expected) > 1e-9:
                gap = f.t - frames[i - 1].t
                raise ScenarioFormatError(
                    f"frame {i} (line {first_line + i}): non-uniform timestamp t={f.t} "
                    f"(gap {gap:.3f} s, expected {dt} s)"
                )
        if f.speed < 0:
            raise ScenarioFormatError(f"frame {i} (line {first_line + i}): negative ego speed")
        ids = [n.id for n in f.neighbors]
        if len(set(ids)) != len(ids):
            raise ScenarioFormatError(f"frame {i} (line {first_line + i}): duplicate neighbor id")
        for n in f.neighbors:
            if n.id in seen_ended:
                raise ScenarioFormatError(f"frame {i} (line {first_line + i}): neighbor id {n.id} reappears")
            if classes.setdefault(n.id, n.cls) != n.cls:
                raise ScenarioFormatError(f"frame {i} (line {first_line + i}): neighbor id {n.id} changes class")
        now = set(ids)
        seen_ended |= prev_ids - now
        prev_ids = now


def loads_scenario(text: str) -> ScenarioLog:
    lines = text.splitlines()
    if not lines:
        raise ScenarioFormatError("line 1: empty scenario file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"line 1: malformed header ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise ScenarioFormatError(f"line 1: expected format {FORMAT!r}")
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        frames.append(_parse_frame(d, lineno))
    dt = float(header.get("dt", DT))
    if "frames" in header and int(header["frames"]) != len(frames):
        raise ScenarioFormatError(f"header declares {header['frames']} frames, found {len(frames)}")
    _validate_frames(frames, dt)
    return ScenarioLog(str(header.get("id", "")), frames, dt, dict(header.get("meta", {})))


def parse_scenario(path) -> ScenarioLog:
    return loads_scenario(FsPath(path).read_text())


def jitter(log: ScenarioLog, sigma: float, seed: int) -> ScenarioLog:
    """Seeded Gaussian position noise on ego and neighbor poses (training augmentation)."""
    rng = np.random.default_rng(seed)
    frames = []
    for f in log.frames:
        e = rng.normal(0.0, sigma, 2)
        nbs = []
        for n in f.neighbors:
            d = rng.normal(0.0, sigma, 2)
            nbs.append(replace(n, pose=Pose2(n.pose.x + d[0], n.pose.y + d[1], n.pose.yaw)))
        frames.append(replace(f, ego=Pose2(f.ego.x + e[0], f.ego.y + e[1], f.ego.yaw), neighbors=tuple(nbs)))
    return ScenarioLog(log.id, frames, log.dt, dict(log.meta))


# --- samples ---------------------------------------------------------------


@dataclass(eq=False)
class SceneSample:
    """One prediction instance, everything expressed in the current ego frame."""

    ego_past: Track
    neighbor_pasts: list
    neighbor_futures: list
    neighbor_ids: list
    command: NavCommand
    ego_future: Track
    snapshots: list  # 20 global-frame bev.Snapshot, oldest first
    ego_pose: Pose2  # current global ego pose
    scenario_id: str = ""
    frame_index: int = 0
    bev_padded: bool = False

    @property
    def bev(self) -> np.ndarray:
        """The (20, 121, 21, 5) BEV tensor; rebuilt on every access."""
        return bev.accumulate(self.snapshots, self.ego_pose)

    @property
    def neighbor_offsets(self) -> list:
        """Neighbor futures as displacements from each neighbor's current position."""
        out = []
        for past, fut in zip(self.neighbor_pasts, self.neighbor_futures):
            out.append(fut.positions - past.positions[-1][None])
        return out


def _track_from(entries, t0: float, ref: Pose2, dt: float) -> Track:
    """entries: list of (Pose2, speed) in the global frame, first at time t0."""
    if not entries:
        return Track([], [], [], [], [], 1.0 / dt)
    local = [pose_to_frame(p, ref) for p, _ in entries]
    return Track(
        t0 + dt * np.arange(len(entries)),
        [p.x for p in local],
        [p.y for p in local],
        [p.yaw for p in local],
        [s for _, s in entries],
        1.0 / dt,
    )


def build_sample(
    log: ScenarioLog,
    index: int,
    horizon: int = HORIZON,
    ego_past: int = EGO_PAST,
    neighbor_past: int = NEIGHBOR_PAST,
    max_neighbors: int = MAX_NEIGHBORS,
    ego_history: Optional[Sequence] = None,
) -> SceneSample:
    """Cut the instance centred on frame ``index``.

    ``ego_history`` optionally replaces the logged ego states of frames
    ``index - ego_past .. index`` with ``ego_past + 1`` (Pose2, speed) pairs
    (closed-loop simulation). Futures shorter than ``horizon`` are kept short
    when the log ends.
    """
    frames = log.frames
    dt = log.dt
    if index < ego_past or index >= len(frames):
        raise IndexError(f"frame {index} lacks {ego_past} past frames")
    if ego_history is None:
        ego_history = [(f.ego, f.speed) for f in frames[index - ego_past : index + 1]]
    if len(ego_history) != ego_past + 1:
        raise ValueError(f"ego history must hold {ego_past + 1} states")
    ref = ego_history[-1][0]
    now = frames[index]

    ego_past_track = _track_from(list(ego_history), -ego_past * dt, ref, dt)
    fut = [(f.ego, f.speed) for f in frames[index + 1 : index + 1 + horizon]]
    ego_future = _track_from(fut, dt, ref, dt)

    candidates = []
    for n in now.neighbors:
        hist = []
        for f in frames[max(0, index - neighbor_past) : index + 1]:
            s = f.neighbor(n.id)
            if s is not None:
                hist.append(s)
        if len(hist) != neighbor_past + 1:
            continue
        rel = points_to_frame(np.array([n.pose.x, n.pose.y]), ref)
        candidates.append((float(np.hypot(*rel)), n.id, hist))
    candidates.sort(key=lambda c: (c[0], c[1]))
    pasts, futures, ids = [], [], []
    for _, nid, hist in candidates[:max_neighbors]:
        pasts.append(_track_from([(s.pose, s.speed) for s in hist], -neighbor_past * dt, ref, dt))
        nf = []
        for f in frames[index + 1 : index + 1 + horizon]:
            s = f.neighbor(nid)
            if s is None:
                break
            nf.append((s.pose, s.speed))
        futures.append(_track_from(nf, dt, ref, dt))
        ids.append(nid)

    snaps, padded = bev.pad_history([f.snapshot() for f in frames[max(0, index - bev.N_FRAMES + 1) : index + 1]])
    return SceneSample(
        ego_past=ego_past_track,
        neighbor_pasts=pasts,
        neighbor_futures=futures,
        neighbor_ids=ids,
        command=now.command,
        ego_future=ego_future,
        snapshots=snaps,
        ego_pose=ref,
        scenario_id=log.id,
        frame_index=index,
        bev_padded=padded,
    )


def cut_samples(
    log: ScenarioLog,
    stride: int = 10,
    horizon: int = HORIZON,
    ego_past: int = EGO_PAST,
    neighbor_past: int = NEIGHBOR_PAST,
    max_neighbors: int = MAX_NEIGHBORS,
) -> list[SceneSample]:
    """Sliding windows of ``ego_past`` past intervals plus ``horizon`` future steps."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    last = len(log.frames) - 1 - horizon
    if last < ego_past:
        warnings.warn(f"scenario {log.id!r} is too short for one window ({len(log.frames)} frames)")
        return []
    return [
        build_sample(log, i, horizon, ego_past, neighbor_past, max_neighbors)
        for i in range(ego_past, last + 1, stride)
    ]


# --- synthetic scenarios ---------------------------------------------------


class RoadPath:
    """Arc-length parametrised polyline with interpolated heading."""

    def __init__(self, xy: np.ndarray):
        xy = np.asarray(xy, dtype=float)
        d = np.diff(xy, axis=0)
        seg = np.hypot(d[:, 0], d[:, 1])
        keep = np.concatenate([[True], seg > 1e-9])
        xy = xy[keep]
        d = np.diff(xy, axis=0)
        seg = np.hypot(d[:, 0], d[:, 1])
        self.xy = xy
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        head = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
        mid = np.concatenate([[head[0]], 0.5 * (head[1:] + head[:-1]), [head[-1]]])
        self.heading = mid

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def at(self, s) -> tuple:
        s = np.clip(s, 0.0, self.length)
        x = np.interp(s, self.s, self.xy[:, 0])
        y = np.interp(s, self.s, self.xy[:, 1])
        yaw = np.interp(s, self.s, self.heading)
        return x, y, yaw

    def offset(self, dist: float) -> "RoadPath":
        nx, ny = -np.sin(self.heading), np.cos(self.heading)
        return RoadPath(self.xy + dist * np.stack([nx, ny], axis=-1))


def _segments_path(segments, ds: float = 0.05) -> RoadPath:
    """Chain of ("line", length) and ("arc", radius, signed angle) pieces from the origin heading +x."""
    x, y, th = 0.0, 0.0, 0.0
    pts = [(x, y)]
    for seg in segments:
        if seg[0] == "line":
            n = max(1, int(math.ceil(seg[1] / ds)))
            for i in range(1, n + 1):
                pts.append((x + math.cos(th) * seg[1] * i / n, y + math.sin(th) * seg[1] * i / n))
            x, y = pts[-1]
        else:
            _, radius, angle = seg
            sign = 1.0 if angle > 0 else -1.0
            cx, cy = x - sign * radius * math.sin(th), y + sign * radius * math.cos(th)
            n = max(1, int(math.ceil(abs(angle) * radius / ds)))
            for i in range(1, n + 1):
                a = th + angle * i / n
                pts.append((cx + sign * radius * math.sin(a), cy - sign * radius * math.cos(a)))
            th += angle
            x, y = pts[-1]
    return RoadPath(np.array(pts))


def _fork_branch(stem: float, transition: float, exit_len: float, width: float, ds: float = 0.05) -> RoadPath:
    xs = np.arange(0.0, stem + transition + exit_len + ds, ds)
    u = np.clip((xs - stem) / transition, 0.0, 1.0)
    ys = width * (3 * u**2 - 2 * u**3)
    return RoadPath(np.stack([xs, ys], axis=-1))


def _direction(delta_heading: float) -> NavCommand:
    if abs(delta_heading) < math.radians(45):
        return NavCommand.STRAIGHT
    return NavCommand.LEFT if delta_heading > 0 else NavCommand.RIGHT


@dataclass
class _Profile:
    """Speed profile as piecewise constant-acceleration phases: (duration, accel)."""

    v0: float
    phases: list

    def sample(self, times: np.ndarray) -> tuple:
        s_out = np.zeros_like(times)
        v_out = np.zeros_like(times)
        for n, t in enumerate(times):
            s, v, rem = 0.0, self.v0, t
            for dur, acc in self.phases:
                step = min(rem, dur)
                s += v * step + 0.5 * acc * step * step
                v += acc * step
                rem -= step
                if rem <= 0:
                    break
            if rem > 0:
                s += v * rem
            s_out[n], v_out[n] = s, max(v, 0.0)
        return s_out, v_out


def _walls(paths: Sequence[RoadPath], half_width: float, spacing: float) -> np.ndarray:
    pts = []
    for p in paths:
        for side in (-half_width, half_width):
            edge = p.offset(side)
            s = np.arange(0.0, edge.length, spacing)
            x, y, _ = edge.at(s)
            pts.append(np.stack([x, y, np.ones_like(x)], axis=-1))
        s = np.arange(0.0, p.length, 10.0)
        x, y, _ = p.at(s)
        pts.append(np.stack([x, y, np.zeros_like(x)], axis=-1))  # ground returns, filtered later
    return np.round(np.vstack(pts), 3)


def gen_synthetic(kind: str, seed: int, params: Optional[dict] = None) -> ScenarioLog:
    """Kinematically feasible synthetic scenario of the given kind.

    Common params: ``v`` (m/s), ``frames``, ``n_neighbors``, ``points`` (bool),
    ``wall_spacing`` (m). ``fork`` accepts ``fork_command`` = "follow" (the
    branch is not revealed by the command) or "branch".
    """
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    p = dict(params or {})
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    n_nb = int(p.get("n_neighbors", 2))
    junctions = []  # (s_start, s_end, command)
    ego_path_idx = 0
    if kind == "straight":
        v = float(p.get("v", rng.uniform(8.0, 14.0)))
        frames = int(p.get("frames", 150))
        paths = [_segments_path([("line", v * frames * DT + 80.0)])]
        profile = _Profile(v, [])
    elif kind == "turn90":
        v = float(p.get("v", rng.uniform(6.0, 9.0)))
        radius = float(p.get("radius", 15.0))
        sign = float(p.get("sign", rng.choice([-1.0, 1.0])))
        approach = float(p.get("approach", v * 4.0))
        paths = [_segments_path([("line", approach), ("arc", radius, sign * math.pi / 2), ("line", 80.0)])]
        junctions.append((approach, approach + radius * math.pi / 2, _direction(sign * math.pi / 2)))
        frames = int(p.get("frames", int((approach + radius * math.pi / 2 + 40.0) / (v * DT))))
        profile = _Profile(v, [])
    elif kind == "fork":
        v = float(p.get("v", rng.uniform(8.0, 12.0)))
        stem = v * float(p.get("fork_time", 5.0))
        transition = float(p.get("transition", 25.0))
        width = float(p.get("width", 6.0))
        paths = [_fork_branch(stem, transition, 80.0, w) for w in (width, -width)]
        ego_path_idx = int(rng.integers(2)) if "branch" not in p else (0 if p["branch"] == "left" else 1)
        if p.get("fork_command", "follow") == "branch":
            junctions.append((stem, stem + transition, NavCommand.LEFT if ego_path_idx == 0 else NavCommand.RIGHT))
        frames = int(p.get("frames", 90))
        profile = _Profile(v, [])
    elif kind == "roundabout":
        v = float(p.get("v", rng.uniform(6.0, 8.0)))
        radius = float(p.get("radius", 15.0))
        angle = float(p.get("angle", rng.choice([0.5, 1.0, 1.5]) * math.pi))
        approach = float(p.get("approach", v * 4.0))
        paths = [_segments_path([("line", approach), ("arc", radius, angle), ("line", 60.0)])]
        junctions.append((approach, approach + radius * angle, _direction(math.remainder(angle, 2 * math.pi))))
        frames = int(p.get("frames", int((approach + radius * angle + 30.0) / (v * DT))))
        profile = _Profile(v, [])
    else:  # stop_and_go
        v = float(p.get("v", rng.uniform(8.0, 12.0)))
        decel, accel = float(p.get("decel", 2.5)), float(p.get("accel", 1.5))
        cruise, stop = float(p.get("cruise", 4.0)), float(p.get("stop", 2.0))
        phases = [(cruise, 0.0), (v / decel, -decel), (stop, 0.0), (v / accel, accel), (cruise, 0.0)]
        profile = _Profile(v, phases)
        total = sum(d for d, _ in phases)
        frames = int(p.get("frames", int(total / DT)))
        paths = [_segments_path([("line", v * total + 100.0)])]

    times = DT * np.arange(frames)
    ego_s, ego_v = profile.sample(times)
    ego_path = paths[ego_path_idx]

    # neighbours: lane followers on the road ahead of (or behind) the ego
    nb_specs = []
    for nid in range(1, n_nb + 1):
        gap = float(rng.uniform(12.0, 45.0)) * (1 if nid % 2 else -0.5)
        path_idx = int(rng.integers(len(paths)))
        cls = int(rng.choice([VehicleClass.CAR, VehicleClass.CAR, VehicleClass.TRUCK, VehicleClass.TWO_WHEELER]))
        nb_specs.append((nid, gap, path_idx, cls))

    wall_pts = _walls(paths, float(p.get("half_width", 4.0)), float(p.get("wall_spacing", 2.0)))
    with_points = bool(p.get("points", True))

    out = []
    for i, t in enumerate(times):
        x, y, yaw = ego_path.at(ego_s[i])
        ego = Pose2(float(x), float(y), float(yaw))
        cmd = NavCommand.FOLLOW
        for s0, s1, c in junctions:
            if s0 - JUNCTION_RADIUS <= ego_s[i] <= s1:
                cmd = c
        nbs = []
        for nid, gap, path_idx, cls in nb_specs:
            s_n = ego_s[i] + gap
            path = paths[path_idx]
            if not 0.0 <= s_n <= path.length:
                continue
            nx_, ny_, nyaw = path.at(s_n)
            state = State.DYNAMIC if ego_v[i] > 0.5 else State.STOPPED
            nbs.append(NeighborState(nid, Pose2(float(nx_), float(ny_), float(nyaw)), float(ego_v[i]), cls, state))
        pts = None
        if with_points:
            near = np.hypot(wall_pts[:, 0] - x, wall_pts[:, 1] - y) <= 65.0
            pts = tuple(tuple(float(c) for c in row) for row in wall_pts[near])
        out.append(Frame(float(t), ego, float(ego_v[i]), cmd, tuple(nbs), pts))

    # neighbours leaving the road never come back, so ids stay contiguous
    meta = {"kind": kind, "seed": int(seed), "v": v}
    if kind == "fork":
        meta["branch"] = "left" if ego_path_idx == 0 else "right"
    log = ScenarioLog(f"{kind}-{seed:05d}", out, DT, meta)
    log.validate()
    return log


def max_yaw_rate_ratio(log: ScenarioLog, wheelbase: float = WHEELBASE, max_steer: float = MAX_STEER) -> float:
    """Largest |yaw rate| / (v tan(max_steer) / L) over consecutive frames (<= 1 means feasible)."""
    worst = 0.0
    for a, b in zip(log.frames[:-1], log.frames[1:]):
        rate = abs(math.remainder(b.ego.yaw - a.ego.yaw, 2 * math.pi)) / log.dt
        v = max(a.speed, b.speed)
        if rate == 0.0:
            continue
        limit = v * math.tan(max_steer) / wheelbase
        worst = max(worst, rate / limit if limit > 0 else math.inf)
    return worst
