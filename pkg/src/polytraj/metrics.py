"""Offline evaluation: min / conf / weight displacement metrics and miss rate.

Errors are computed on component mean paths only. The final point of a
horizon of T steps is step index T-1 (time T*dt).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Track
from .mixture import TrajectoryMixture, mode_order

TOP_KS = (1, 5, 10)
MISS_RADIUS = 2.0
BASE_METRICS = ("minMSD", "minADE", "minFDE", "confMSD", "confADE", "confFDE", "weightFDE")


class EmptyPredictionSetError(ValueError):
    pass


@dataclass
class PredictionSet:
    """Mixtures and matching ground-truth futures (as (T, 2) arrays or Tracks).

    Agents whose ground truth is shorter than the mixture horizon are dropped
    and counted in ``n_excluded``.
    """

    mixtures: list
    ground_truth: list
    n_excluded: int = 0

    def __post_init__(self):
        if len(self.mixtures) != len(self.ground_truth):
            raise ValueError("one ground truth per mixture is required")
        keep_m, keep_g = [], []
        for m, g in zip(self.mixtures, self.ground_truth):
            arr = g.positions if isinstance(g, Track) else np.asarray(g, dtype=float)
            if arr.shape[0] < m.T:
                self.n_excluded += 1
                continue
            keep_m.append(m)
            keep_g.append(arr[: m.T])
        self.mixtures, self.ground_truth = keep_m, keep_g
        if keep_m:
            T, dt = keep_m[0].T, keep_m[0].dt
            if any(m.T != T or m.dt != dt for m in keep_m):
                raise ValueError("all agents must share T and dt")

    def __len__(self):
        return len(self.mixtures)

    def errors(self) -> list[np.ndarray]:
        """Per agent, (K, T, 2) signed errors of each component mean."""
        return [m.means() - g[None] for m, g in zip(self.mixtures, self.ground_truth)]


def _require(p: PredictionSet):
    if len(p) == 0:
        raise EmptyPredictionSetError("prediction set contains no evaluable agents")


def _axis_sel(axis):
    return {None: slice(None), "x": slice(0, 1), "y": slice(1, 2)}[axis]


def _per_agent(p: PredictionSet, axis=None):
    """Per agent arrays of per-component (sq-error sum, disp sum, final disp), each (K,)."""
    sel = _axis_sel(axis)
    out = []
    for e in p.errors():
        e = e[..., sel]
        sq = (e**2).sum(-1)  # (K, T)
        d = np.sqrt(sq)
        out.append((sq.sum(1), d.sum(1), d[:, -1]))
    return out


def min_metrics(p: PredictionSet, axis=None) -> tuple[float, float, float]:
    _require(p)
    T = p.mixtures[0].T
    rows = _per_agent(p, axis)
    msd = sum(r[0].min() for r in rows) / (T * len(rows))
    ade = sum(r[1].min() for r in rows) / (T * len(rows))
    fde = sum(r[2].min() for r in rows) / len(rows)
    return float(msd), float(ade), float(fde)


def conf_metrics(p: PredictionSet, axis=None) -> tuple[float, float, float]:
    _require(p)
    T = p.mixtures[0].T
    rows = _per_agent(p, axis)
    best = [int(mode_order(m.pi)[0]) for m in p.mixtures]
    msd = sum(r[0][k] for r, k in zip(rows, best)) / (T * len(rows))
    ade = sum(r[1][k] for r, k in zip(rows, best)) / (T * len(rows))
    fde = sum(r[2][k] for r, k in zip(rows, best)) / len(rows)
    return float(msd), float(ade), float(fde)


def weight_fde(p: PredictionSet, axis=None) -> float:
    _require(p)
    rows = _per_agent(p, axis)
    return float(sum(float(m.pi @ r[2]) for m, r in zip(p.mixtures, rows)) / len(rows))


def metric_value(p: PredictionSet, metric: str, axis=None) -> float:
    if metric.startswith("min"):
        vals = min_metrics(p, axis)
    elif metric.startswith("conf"):
        vals = conf_metrics(p, axis)
    elif metric == "weightFDE":
        return weight_fde(p, axis)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return vals[("MSD", "ADE", "FDE").index(metric[-3:])]


def axis_split(p: PredictionSet, metric: str) -> tuple[float, float]:
    """The named metric recomputed on the longitudinal and lateral coordinate alone.

    Min metrics take their minimum independently on each coordinate.
    """
    return metric_value(p, metric, "x"), metric_value(p, metric, "y")


def top_k_final_errors(m: TrajectoryMixture, gt: np.ndarray, top_k: int) -> np.ndarray:
    order = mode_order(m.pi)[: max(1, min(top_k, m.K))]
    final = m.means()[order, -1]
    return np.linalg.norm(final - gt[-1][None], axis=-1)


def miss_rate(p: PredictionSet, top_k: int, radius: float = MISS_RADIUS) -> float:
    """Fraction of agents whose top-k final points all lie farther than ``radius``."""
    _require(p)
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    misses = sum(bool(np.all(top_k_final_errors(m, g, top_k) > radius)) for m, g in zip(p.mixtures, p.ground_truth))
    return misses / len(p)


@dataclass
class MetricReport:
    minMSD: float
    minADE: float
    minFDE: float
    confMSD: float
    confADE: float
    confFDE: float
    weightFDE: float
    axis: dict = field(default_factory=dict)
    missRate: dict = field(default_factory=dict)
    n_agents: int = 0
    n_excluded: int = 0

    def to_flat(self) -> dict:
        flat = {name: getattr(self, name) for name in BASE_METRICS}
        flat.update(self.axis)
        flat.update(self.missRate)
        flat["n_agents"] = self.n_agents
        flat["n_excluded"] = self.n_excluded
        return flat

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2)


def evaluate(p: PredictionSet, top_ks: Sequence[int] = TOP_KS, radius: float = MISS_RADIUS) -> MetricReport:
    mins = min_metrics(p)
    confs = conf_metrics(p)
    axis = {}
    for name in BASE_METRICS:
        vx, vy = axis_split(p, name)
        axis[f"{name}_x"] = vx
        axis[f"{name}_y"] = vy
    tag = f"{radius:g}m"
    miss = {f"missRate@{tag}_top{k}": miss_rate(p, k, radius) for k in top_ks}
    return MetricReport(*mins, *confs, weight_fde(p), axis, miss, len(p), p.n_excluded)


def fde_table(p: PredictionSet) -> dict:
    """Per-agent min / conf / weight FDE lists, for cumulative curves."""
    rows = _per_agent(p)
    best = [int(mode_order(m.pi)[0]) for m in p.mixtures]
    return {
        "min": [float(r[2].min()) for r in rows],
        "conf": [float(r[2][k]) for r, k in zip(rows, best)],
        "weight": [float(m.pi @ r[2]) for m, r in zip(p.mixtures, rows)],
    }


def cumulative_curve(values: Sequence[float], thresholds: Sequence[float]) -> list[float]:
    """Percentage of values strictly below each threshold."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return [0.0 for _ in thresholds]
    return [float(100.0 * np.mean(v < th)) for th in thresholds]
