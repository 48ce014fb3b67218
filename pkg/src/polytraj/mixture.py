"""Per-axis Gaussian mixtures with shared weights and polynomial means.

A :class:`TrajectoryMixture` holds K components. Component k has a weight
``pi[k]``, zero-constant quartic coefficients for x and y, and one standard
deviation per axis and future step. Step ``i`` (0-based) sits at time
``(i + 1) * dt`` after the prediction instant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .geometry import N_COEFFS, PolyCoeffs, Track, power_basis

AXES = ("x", "y")
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 3.0
    log_sigma_min: float = -3.0
    log_sigma_max: float = 4.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.log_sigma_min < self.log_sigma_max:
            raise ValueError("log_sigma_min must be below log_sigma_max")

    @property
    def axis_weight(self) -> np.ndarray:
        return np.array([1.0, self.alpha])


@dataclass(eq=False)
class TrajectoryMixture:
    pi: np.ndarray  # (K,)
    coeffs: np.ndarray  # (K, 2, 4)
    sigma: np.ndarray  # (K, 2, T)
    dt: float = 0.1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float).reshape(-1)
        K = self.pi.size
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(K, 2, N_COEFFS)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if K < 1:
            raise ValueError("mixture needs at least one component")
        if self.sigma.ndim != 3 or self.sigma.shape[:2] != (K, 2):
            raise ValueError(f"sigma must have shape (K, 2, T), got {self.sigma.shape}")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if not np.all(self.sigma > 0):
            raise ValueError("all standard deviations must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def K(self) -> int:
        return self.pi.size

    @property
    def T(self) -> int:
        return self.sigma.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.T + 1)

    def component_coeffs(self, k: int, axis: str) -> PolyCoeffs:
        return PolyCoeffs(tuple(self.coeffs[k, AXES.index(axis)]), axis)

    def means(self) -> np.ndarray:
        """Mean paths, shape (K, T, 2)."""
        return np.einsum("kad,dt->kta", self.coeffs, power_basis(self.times))

    def mean_at(self, t: float) -> np.ndarray:
        """Mean positions of all components at an arbitrary time t >= 0, shape (K, 2)."""
        basis = power_basis(np.array([t]))[:, 0]
        return self.coeffs @ basis

    @classmethod
    def from_paths(cls, paths: np.ndarray, dt: float = 0.1, pi=None, sigma: float = 1.0) -> "TrajectoryMixture":
        """Least-squares polynomial mixture through (K, T, 2) mean paths."""
        from .geometry import fit_coeffs

        paths = np.asarray(paths, dtype=float)
        K, T, _ = paths.shape
        times = dt * np.arange(1, T + 1)
        flat = paths.transpose(1, 0, 2).reshape(T, K * 2)
        coeffs = fit_coeffs(times, flat).reshape(N_COEFFS, K, 2).transpose(1, 2, 0)
        pi = np.full(K, 1.0 / K) if pi is None else pi
        return cls(pi, coeffs, np.full((K, 2, T), sigma), dt)


def _gt_array(gt, T: int) -> np.ndarray:
    arr = gt.positions if isinstance(gt, Track) else np.asarray(gt, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("ground truth must be a Track or an (T, 2) array")
    if arr.shape[0] != T:
        raise ValueError(f"ground truth has {arr.shape[0]} steps but the mixture horizon is {T}")
    return arr


def log_density(m: TrajectoryMixture, axis: str, t_index: int, value: float) -> float:
    if not 0 <= t_index < m.T:
        raise IndexError(f"t_index {t_index} outside 0..{m.T - 1}")
    a = AXES.index(axis)
    mu = m.coeffs[:, a, :] @ power_basis(m.times[t_index : t_index + 1])[:, 0]
    sig = m.sigma[:, a, t_index]
    with np.errstate(divide="ignore"):
        comp = np.log(m.pi) - HALF_LOG_2PI - np.log(sig) - 0.5 * ((value - mu) / sig) ** 2
    peak = comp.max()
    return float(peak + np.log(np.exp(comp - peak).sum()))


def density(m: TrajectoryMixture, axis: str, t_index: int, value: float) -> float:
    return float(np.exp(log_density(m, axis, t_index, value)))


def _stack(mixtures: Sequence[TrajectoryMixture], gts):
    T = mixtures[0].T
    K = mixtures[0].K
    means = np.empty((len(mixtures), K, 2, T))
    log_sigma = np.empty_like(means)
    log_pi = np.empty((len(mixtures), K))
    gt = np.empty((len(mixtures), 2, T))
    for r, (m, g) in enumerate(zip(mixtures, gts)):
        if m.K != K or m.T != T:
            raise ValueError("all mixtures in one call must share K and T")
        means[r] = m.means().transpose(0, 2, 1)
        log_sigma[r] = np.log(m.sigma)
        with np.errstate(divide="ignore"):
            log_pi[r] = np.log(m.pi)
        gt[r] = _gt_array(g, T).T
    return means, log_sigma, log_pi, gt


def _pairs(ego, neighbors, gt_ego, gt_neighbors):
    neighbors = list(neighbors)
    gt_neighbors = list(gt_neighbors)
    if len(neighbors) != len(gt_neighbors):
        raise ValueError("each neighbor mixture needs exactly one ground-truth track")
    if (ego is None) != (gt_ego is None):
        raise ValueError("ego mixture and ego ground truth must be given together")
    mixtures = ([ego] if ego is not None else []) + neighbors
    gts = ([gt_ego] if gt_ego is not None else []) + gt_neighbors
    return mixtures, gts


def nll_loss(ego, neighbors, gt_ego, gt_neighbors, cfg: LossConfig = LossConfig()) -> float:
    """Summed negative log-likelihood over steps, axes (y weighted by alpha) and agents."""
    mixtures, gts = _pairs(ego, neighbors, gt_ego, gt_neighbors)
    total = 0.0
    for m, g in zip(mixtures, gts):
        loss, *_ = kernels.mixture_nll(*_stack([m], [g]), cfg.axis_weight, False)
        total += float(loss[0])
    return total


@dataclass
class MixtureGrad:
    """Loss gradient for one mixture: w.r.t. softmax logits, coefficients and log-sigma."""

    logits: np.ndarray  # (K,)
    coeffs: np.ndarray  # (K, 2, 4)
    log_sigma: np.ndarray  # (K, 2, T)


def nll_grad(ego, neighbors, gt_ego, gt_neighbors, cfg: LossConfig = LossConfig()) -> list[MixtureGrad]:
    """Analytic gradients of :func:`nll_loss`, ego first then neighbors in order.

    Weights are taken as ``softmax(logits)`` and sigma as ``exp(log_sigma)``;
    the logit gradient does not depend on which softmax preimage is used.
    """
    mixtures, gts = _pairs(ego, neighbors, gt_ego, gt_neighbors)
    grads = []
    for m, g in zip(mixtures, gts):
        _, d_mu, d_ls, d_lp = kernels.mixture_nll(*_stack([m], [g]), cfg.axis_weight, True)
        grads.append(
            MixtureGrad(
                logits=d_lp[0] - m.pi * d_lp[0].sum(),
                coeffs=np.einsum("kat,dt->kad", d_mu[0], power_basis(m.times)),
                log_sigma=d_ls[0],
            )
        )
    return grads


@dataclass(frozen=True)
class ModeEntry:
    index: int
    weight: float
    final_point: np.ndarray
    path: np.ndarray


def mode_order(pi: np.ndarray) -> np.ndarray:
    """Component indices by descending weight; equal weights keep index order."""
    return np.argsort(-np.asarray(pi, dtype=float), kind="stable")


def mode_summary(m: TrajectoryMixture) -> list[ModeEntry]:
    paths = m.means()
    return [ModeEntry(int(k), float(m.pi[k]), paths[k, -1].copy(), paths[k]) for k in mode_order(m.pi)]
