"""Closed-loop replay: kinematic bicycle ego driven by a predictor, logged neighbors.

At each 10 Hz step the predictor sees the *simulated* ego history and a BEV
built around the simulated pose; the ego then chases the 1 s point of the
most confident predicted component. Three error kinds are counted with
hysteresis (a kind must clear before it can be counted again):

* lateral: cross-track distance to the expert polyline above 1 m;
* low: simulated speed at least 20 km/h below the expert's;
* high: simulated speed at least 15 % above the expert's while the
  simulated ego would reach the expert's along-path position within 0.6 s.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Protocol

import numpy as np

from . import net
from .baselines import constant_velocity
from .data import EGO_PAST, ScenarioLog, SceneSample, build_sample
from .geometry import N_COEFFS, Pose2, fit_coeffs
from .mixture import TrajectoryMixture, mode_order

ERROR_KINDS = ("lateral", "high", "low")


@dataclass(frozen=True)
class SimState:
    pose: Pose2
    speed: float
    time: float = 0.0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    wheelbase: float = 2.7
    dt: float = 0.1
    lateral_threshold: float = 1.0
    speed_deficit_threshold: float = 20.0 / 3.6
    overspeed_ratio: float = 1.15
    catchup_horizon: float = 0.6
    max_steer: float = 0.6
    accel_min: float = -6.0
    accel_max: float = 3.0
    lookahead: float = 1.0
    stop_distance: float = 0.05
    high_speed_min_speed: float = 1.0
    horizon: int = 20

    def __post_init__(self):
        positive = ("wheelbase", "dt", "lateral_threshold", "speed_deficit_threshold", "catchup_horizon", "max_steer", "accel_max", "lookahead")
        if any(getattr(self, n) <= 0 for n in positive) or self.overspeed_ratio <= 1.0 or self.accel_min >= 0:
            raise ValueError("invalid simulation configuration")


def bicycle_step(state: SimState, steer: float, accel: float, cfg: SimConfig = SimConfig()) -> SimState:
    """Explicit kinematic bicycle update over ``cfg.dt``; inputs are clamped to their limits."""
    steer = min(max(steer, -cfg.max_steer), cfg.max_steer)
    accel = min(max(accel, cfg.accel_min), cfg.accel_max)
    v, th = state.speed, state.pose.yaw
    x = state.pose.x + v * math.cos(th) * cfg.dt
    y = state.pose.y + v * math.sin(th) * cfg.dt
    th = th + v / cfg.wheelbase * math.tan(steer) * cfg.dt
    return SimState(Pose2(x, y, th), max(0.0, v + accel * cfg.dt), state.time + cfg.dt)


def track_point_controller(mixture: TrajectoryMixture, state: SimState, cfg: SimConfig = SimConfig()) -> tuple:
    """Pure pursuit towards the most confident mean at ``cfg.lookahead`` seconds.

    The mixture is expressed in the current ego frame. The acceleration is the
    constant value that covers the target distance in exactly the lookahead
    time. Targets closer than ``stop_distance`` or behind the vehicle brake to
    a stop with the wheels straight.
    """
    k = int(mode_order(mixture.pi)[0])
    px, py = mixture.mean_at(cfg.lookahead)[k]
    d = math.hypot(px, py)
    if d < cfg.stop_distance or px <= 0.0:
        return 0.0, max(cfg.accel_min, -state.speed / cfg.dt)
    beta = math.atan2(py, px)
    steer = math.atan(2.0 * cfg.wheelbase * math.sin(beta) / d)
    steer = min(max(steer, -cfg.max_steer), cfg.max_steer)
    accel = 2.0 * (d - state.speed * cfg.lookahead) / cfg.lookahead**2
    return steer, min(max(accel, cfg.accel_min), cfg.accel_max)


# --- predictors ------------------------------------------------------------


class Predictor(Protocol):
    name: str

    def __call__(self, sample: SceneSample) -> TrajectoryMixture: ...


class OraclePredictor:
    """Emits the expert's logged future (in the simulated ego frame) as a K=1 mixture."""

    name = "oracle"

    def __init__(self, horizon: int = 20):
        self.horizon = horizon

    def __call__(self, sample: SceneSample) -> TrajectoryMixture:
        fut = sample.ego_future.positions[: self.horizon]
        T = fut.shape[0]
        times = sample.ego_future.dt * np.arange(1, T + 1)
        coeffs = fit_coeffs(times, fut).T
        return TrajectoryMixture(np.ones(1), coeffs[None], np.ones((1, 2, T)), sample.ego_future.dt)


class ConstantVelocityPredictor:
    name = "constant_velocity"

    def __init__(self, horizon: int = 20):
        self.horizon = horizon

    def __call__(self, sample: SceneSample) -> TrajectoryMixture:
        return constant_velocity(sample.ego_past, self.horizon, sample.ego_past.dt)


class ZeroSpeedPredictor:
    """Always predicts standing still."""

    name = "zero_speed"

    def __init__(self, horizon: int = 20):
        self.horizon = horizon

    def __call__(self, sample: SceneSample) -> TrajectoryMixture:
        return TrajectoryMixture(np.ones(1), np.zeros((1, 2, N_COEFFS)), np.ones((1, 2, self.horizon)))


class ModelPredictor:
    """Network predictor; selects the head of the sample's navigation command."""

    name = "model"

    def __init__(self, params: net.ModelParams):
        self.params = params

    def __call__(self, sample: SceneSample) -> TrajectoryMixture:
        return net.forward(self.params, sample).for_command(sample.command)


# --- closed loop -----------------------------------------------------------


@dataclass
class SimReport:
    scenario_id: str
    predictor: str
    events: list = field(default_factory=list)
    counts: dict = field(default_factory=lambda: {k: 0 for k in ERROR_KINDS})
    distance: float = 0.0
    steps: int = 0
    valid: bool = True
    error: Optional[str] = None

    def add(self, kind: str, time: float, pose: Pose2) -> None:
        self.events.append({"kind": kind, "time": round(time, 6), "x": pose.x, "y": pose.y})
        self.counts[kind] += 1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _ExpertPath:
    """Piecewise-linear expert path with projection windowed by arc length.

    Repeated positions (the expert standing still) are collapsed so the window
    always spans real road. The final segment is extended as a ray, so a
    vehicle ahead of the whole log is measured by its lateral offset only.
    """

    def __init__(self, xy: np.ndarray, back: float = 20.0, ahead: float = 60.0):
        seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        self.frame_s = np.concatenate([[0.0], np.cumsum(seg)])
        keep = np.concatenate([[True], seg > 1e-9])
        self.xy = xy[keep]
        self.s = self.frame_s[keep]
        self.back, self.ahead = back, ahead
        self.s_cursor = 0.0

    def project(self, p: np.ndarray) -> tuple:
        """(cross-track distance, along-path position) of ``p``."""
        if len(self.xy) < 2:
            return float(np.hypot(*(p - self.xy[0]))), 0.0
        lo = min(len(self.xy) - 2, max(0, int(np.searchsorted(self.s, self.s_cursor - self.back)) - 1))
        hi = min(len(self.xy) - 1, int(np.searchsorted(self.s, self.s_cursor + self.ahead)) + 1)
        a, b = self.xy[lo:hi], self.xy[lo + 1 : hi + 1]
        d = b - a
        L2 = np.einsum("ij,ij->i", d, d)
        u = np.clip(np.einsum("ij,ij->i", p - a, d) / L2, 0.0, 1.0)
        if hi == len(self.xy) - 1:
            # past the end of the log the path continues straight
            u[-1] = max(0.0, float(np.dot(p - a[-1], d[-1]) / L2[-1]))
        dist = np.hypot(*(a + u[:, None] * d - p).T)
        k = int(np.argmin(dist))
        s_here = float(self.s[lo + k] + u[k] * np.sqrt(L2[k]))
        self.s_cursor = s_here
        return float(dist[k]), s_here


TRACE_FIELDS = (
    "time", "sim_x", "sim_y", "sim_yaw", "expert_x", "expert_y", "expert_yaw",
    "sim_speed", "expert_speed", "cross_track", "lateral", "high", "low",
)


def run_closed_loop(log: ScenarioLog, predictor, cfg: SimConfig = SimConfig(), trace: Optional[list] = None) -> SimReport:
    """Drive the simulated ego through ``log`` with ``predictor``; returns the error report.

    When ``trace`` is a list, one dict per step (keys ``TRACE_FIELDS``) is
    appended to it.
    """
    frames = log.frames
    report = SimReport(log.id, getattr(predictor, "name", type(predictor).__name__))
    lookahead_steps = int(round(cfg.lookahead / log.dt))
    start, stop = EGO_PAST, len(frames) - 1 - lookahead_steps
    if stop <= start:
        report.valid = False
        report.error = "scenario too short for closed-loop evaluation"
        return report

    path = _ExpertPath(np.array([[f.ego.x, f.ego.y] for f in frames]))
    history = [(f.ego, f.speed) for f in frames[: start + 1]]
    state = SimState(frames[start].ego, frames[start].speed, frames[start].t)
    path.s_cursor = path.frame_s[start]
    active = {k: False for k in ERROR_KINDS}

    for i in range(start, stop):
        try:
            sample = build_sample(log, i, horizon=cfg.horizon, ego_history=history[-(EGO_PAST + 1) :])
            mixture = predictor(sample)
            steer, accel = track_point_controller(mixture, state, cfg)
        except Exception as exc:  # the report is returned partial and flagged
            report.valid = False
            report.error = f"predictor failed at frame {i}: {type(exc).__name__}: {exc}"
            break
        state = bicycle_step(state, steer, accel, cfg)
        report.distance += state.speed * cfg.dt
        report.steps += 1
        history.append((state.pose, state.speed))

        expert = frames[i + 1]
        cross, s_sim = path.project(np.array([state.pose.x, state.pose.y]))
        s_exp = path.frame_s[i + 1]
        gap = s_exp - s_sim
        closure = state.speed - expert.speed
        cond = {
            "lateral": cross > cfg.lateral_threshold,
            "low": state.speed <= expert.speed - cfg.speed_deficit_threshold,
            "high": state.speed >= cfg.overspeed_ratio * expert.speed
            and state.speed >= cfg.high_speed_min_speed
            and gap <= closure * cfg.catchup_horizon,
        }
        for kind in ERROR_KINDS:
            if cond[kind] and not active[kind]:
                report.add(kind, expert.t, state.pose)
            active[kind] = cond[kind]
        if trace is not None:
            trace.append(
                {
                    "time": expert.t,
                    "sim_x": state.pose.x,
                    "sim_y": state.pose.y,
                    "sim_yaw": state.pose.yaw,
                    "expert_x": expert.ego.x,
                    "expert_y": expert.ego.y,
                    "expert_yaw": expert.ego.yaw,
                    "sim_speed": state.speed,
                    "expert_speed": expert.speed,
                    "cross_track": cross,
                    **{k: int(active[k]) for k in ERROR_KINDS},
                }
            )
    return report


def write_trace_csv(trace: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
