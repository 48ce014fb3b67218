"""Compact command-conditioned mixture predictor with hand-derived gradients.

Architecture (all dense layers use tanh except head outputs):

* ego track encoder: 2 layers on the flattened past displacements;
* neighbor track encoder: 2 layers, shared by all neighbors, on past
  displacements plus the neighbor's current position;
* BEV encoder: 2 layers on the per-frame average-pooled grid;
* four ego heads (one per navigation command) of 3 layers on
  [BEV code, ego code];
* one shared neighbor head of 3 layers on [BEV code, neighbor code].

Each head emits K logits, K x 2 x 4 normalised polynomial coefficients and
K x 2 x T raw log-sigmas. Coefficients are produced for time scaled by the
horizon, which keeps the t^4 column O(1) during training.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bev, kernels
from .data import NavCommand, SceneSample
from .geometry import POWERS, power_basis
from .mixture import LossConfig, TrajectoryMixture

N_COMMANDS = len(NavCommand)
PARAM_MAGIC = b"PLP1"
# per-channel scaling of pooled BEV features: x, y, state, class, count
BEV_SCALE = np.array([0.1, 0.1, 1 / 3, 1 / 3, 0.5])


class NonFiniteLossError(FloatingPointError):
    pass


class ParamFileError(ValueError):
    pass


class FingerprintMismatchError(ParamFileError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    K: int = 12
    T: int = 40
    dt: float = 0.1
    ego_past: int = 20
    neighbor_past: int = 10
    max_neighbors: int = 10
    track_hidden: int = 32
    track_out: int = 32
    neighbor_hidden: int = 32
    neighbor_out: int = 32
    bev_pool: tuple = (12, 7)
    bev_hidden: int = 32
    bev_out: int = 32
    head_hidden: int = 64
    use_bev: bool = True
    coeff_scale: float = 10.0
    log_sigma_min: float = -3.0
    log_sigma_max: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "bev_pool", tuple(int(v) for v in self.bev_pool))
        if self.K < 1 or self.T < 1:
            raise ValueError("K and T must be positive")
        if not self.log_sigma_min < self.log_sigma_max:
            raise ValueError("log_sigma_min must be below log_sigma_max")

    @property
    def ego_in(self) -> int:
        return 2 * self.ego_past

    @property
    def neighbor_in(self) -> int:
        return 2 * self.neighbor_past + 2

    @property
    def bev_in(self) -> int:
        return bev.N_FRAMES * self.bev_pool[0] * self.bev_pool[1] * bev.NCH

    @property
    def head_out(self) -> int:
        return self.K * (1 + 2 * 4 + 2 * self.T)

    def fingerprint(self) -> int:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def past_mlp_arch(arch: ArchConfig) -> ArchConfig:
    """The past-trajectory-only baseline: same network with the BEV input zeroed."""
    return replace(arch, use_bev=False)


def _mlp_shapes(prefix: str, sizes: Sequence[int]) -> list:
    out = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        out.append((f"{prefix}.W{i}", (fan_out, fan_in)))
        out.append((f"{prefix}.b{i}", (fan_out,)))
    return out


def layout(arch: ArchConfig) -> list:
    """Ordered (name, shape) list defining the flat parameter vector."""
    shapes = []
    shapes += _mlp_shapes("ego_enc", [arch.ego_in, arch.track_hidden, arch.track_out])
    shapes += _mlp_shapes("nb_enc", [arch.neighbor_in, arch.neighbor_hidden, arch.neighbor_out])
    shapes += _mlp_shapes("bev_enc", [arch.bev_in, arch.bev_hidden, arch.bev_out])
    for c in range(N_COMMANDS):
        shapes += _mlp_shapes(
            f"ego_head{c}", [arch.bev_out + arch.track_out, arch.head_hidden, arch.head_hidden, arch.head_out]
        )
    shapes += _mlp_shapes("nb_head", [arch.bev_out + arch.neighbor_out, arch.head_hidden, arch.head_hidden, arch.head_out])
    return shapes


class ModelParams:
    """All weights in one float64 vector; named views are reshaped slices of it."""

    def __init__(self, arch: ArchConfig, flat: Optional[np.ndarray] = None):
        self.arch = arch
        self.offsets = {}
        pos = 0
        for name, shape in layout(arch):
            size = int(np.prod(shape))
            self.offsets[name] = (pos, shape)
            pos += size
        self.size = pos
        if flat is None:
            flat = np.zeros(pos)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (pos,):
            raise ValueError(f"flat parameter vector must have length {pos}, got {flat.shape}")
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        start, shape = self.offsets[name]
        return self.flat[start : start + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.flat.copy())

    @classmethod
    def init(cls, arch: ArchConfig, seed: int) -> "ModelParams":
        p = cls(arch)
        rng = np.random.default_rng(seed)
        for name, shape in layout(arch):
            if len(shape) == 2:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                p[name][...] = rng.uniform(-limit, limit, size=shape)
        return p


# --- features --------------------------------------------------------------


@dataclass
class SampleFeatures:
    ego: np.ndarray  # (ego_in,)
    bev: np.ndarray  # (bev_in,)
    neighbors: np.ndarray  # (n, neighbor_in)
    command: int
    ego_target: Optional[np.ndarray]  # (T, 2) or None when the future is short
    neighbor_targets: list  # per neighbor (T, 2) displacement or None
    tag: str = ""


def encode_sample(sample: SceneSample, arch: ArchConfig) -> SampleFeatures:
    if len(sample.ego_past) != arch.ego_past + 1:
        raise ValueError(f"ego past must hold {arch.ego_past + 1} poses, got {len(sample.ego_past)}")
    if len(sample.neighbor_pasts) > arch.max_neighbors:
        raise ValueError(f"{len(sample.neighbor_pasts)} neighbors exceed the cap of {arch.max_neighbors}")
    ego = np.diff(sample.ego_past.positions, axis=0).reshape(-1)
    if arch.use_bev:
        pooled = bev.pool(sample.bev, *arch.bev_pool) * BEV_SCALE
        bev_feat = pooled.reshape(-1)
    else:
        bev_feat = np.zeros(arch.bev_in)
    nbs = []
    for past in sample.neighbor_pasts:
        if len(past) != arch.neighbor_past + 1:
            raise ValueError(f"neighbor past must hold {arch.neighbor_past + 1} poses")
        pos = past.positions
        nbs.append(np.concatenate([np.diff(pos, axis=0).reshape(-1), 0.1 * pos[-1]]))
    nbs = np.array(nbs).reshape(-1, arch.neighbor_in)
    ego_target = sample.ego_future.positions if len(sample.ego_future) >= arch.T else None
    if ego_target is not None:
        ego_target = ego_target[: arch.T]
    nb_targets = []
    for off in sample.neighbor_offsets:
        nb_targets.append(off[: arch.T] if len(off) >= arch.T else None)
    return SampleFeatures(
        ego, bev_feat, nbs, sample.command.index, ego_target, nb_targets, f"{sample.scenario_id}@{sample.frame_index}"
    )


# --- forward / backward ----------------------------------------------------


def _dense(p: ModelParams, prefix: str, x: np.ndarray, n_layers: int, cache: list) -> np.ndarray:
    h = x
    for i in range(1, n_layers + 1):
        z = h @ p[f"{prefix}.W{i}"].T + p[f"{prefix}.b{i}"]
        out = z if (prefix.startswith(("ego_head", "nb_head")) and i == n_layers) else np.tanh(z)
        cache.append((prefix, i, h, out))
        h = out
    return h


def _dense_back(p: ModelParams, grad: ModelParams, cache: list, prefix: str, d_out: np.ndarray) -> np.ndarray:
    entries = [c for c in cache if c[0] == prefix]
    d = d_out
    n_layers = len(entries)
    for _, i, h_in, out in reversed(entries):
        is_linear = prefix.startswith(("ego_head", "nb_head")) and i == n_layers
        dz = d if is_linear else d * (1.0 - out * out)
        grad[f"{prefix}.W{i}"][...] += dz.T @ h_in
        grad[f"{prefix}.b{i}"][...] += dz.sum(axis=0)
        d = dz @ p[f"{prefix}.W{i}"]
    return d


@dataclass
class _Decoded:
    log_pi: np.ndarray  # (R, K)
    pi: np.ndarray
    coeffs: np.ndarray  # (R, K, 2, 4) in seconds
    raw_ls: np.ndarray  # (R, K, 2, T)
    log_sigma: np.ndarray
    means: np.ndarray  # (R, K, 2, T)


def _coeff_factor(arch: ArchConfig) -> np.ndarray:
    horizon = arch.T * arch.dt
    return arch.coeff_scale / horizon ** POWERS.astype(float)


def _decode(out: np.ndarray, arch: ArchConfig) -> _Decoded:
    R = out.shape[0]
    K, T = arch.K, arch.T
    logits = out[:, :K]
    b = out[:, K : K + 8 * K].reshape(R, K, 2, 4)
    raw_ls = out[:, 9 * K :].reshape(R, K, 2, T)
    peak = logits.max(axis=1, keepdims=True)
    lse = peak + np.log(np.exp(logits - peak).sum(axis=1, keepdims=True))
    log_pi = logits - lse
    coeffs = b * _coeff_factor(arch)
    log_sigma = np.clip(raw_ls, arch.log_sigma_min, arch.log_sigma_max)
    basis = power_basis(arch.dt * np.arange(1, T + 1))
    means = coeffs @ basis
    return _Decoded(log_pi, np.exp(log_pi), coeffs, raw_ls, log_sigma, means)


def _decode_back(dec: _Decoded, arch: ArchConfig, d_means, d_ls, d_lp) -> np.ndarray:
    R = d_means.shape[0]
    K, T = arch.K, arch.T
    d_logits = d_lp - dec.pi * d_lp.sum(axis=1, keepdims=True)
    basis = power_basis(arch.dt * np.arange(1, T + 1))
    d_b = (d_means @ basis.T) * _coeff_factor(arch)
    inside = (dec.raw_ls > arch.log_sigma_min) & (dec.raw_ls < arch.log_sigma_max)
    d_raw = d_ls * inside
    return np.concatenate([d_logits, d_b.reshape(R, -1), d_raw.reshape(R, -1)], axis=1)


def _to_mixtures(dec: _Decoded, arch: ArchConfig) -> list:
    return [
        TrajectoryMixture(dec.pi[r] / dec.pi[r].sum(), dec.coeffs[r], np.exp(dec.log_sigma[r]), arch.dt)
        for r in range(dec.pi.shape[0])
    ]


def _stack_inputs(feats: Sequence[SampleFeatures], arch: ArchConfig):
    x_ego = np.stack([f.ego for f in feats])
    x_bev = np.stack([f.bev for f in feats])
    if not arch.use_bev:
        x_bev = np.zeros_like(x_bev)  # features may come from a BEV-enabled encoding
    nb_rows, owner = [], []
    for b, f in enumerate(feats):
        for row in f.neighbors:
            nb_rows.append(row)
            owner.append(b)
    x_nb = np.array(nb_rows).reshape(-1, arch.neighbor_in)
    return x_ego, x_bev, x_nb, np.array(owner, dtype=np.int64)


def _forward_batch(params: ModelParams, feats: Sequence[SampleFeatures]):
    arch = params.arch
    cache: list = []
    x_ego, x_bev, x_nb, owner = _stack_inputs(feats, arch)
    e_ego = _dense(params, "ego_enc", x_ego, 2, cache)
    e_bev = _dense(params, "bev_enc", x_bev, 2, cache)
    z_ego = np.concatenate([e_bev, e_ego], axis=1)
    heads = [_dense(params, f"ego_head{c}", z_ego, 3, cache) for c in range(N_COMMANDS)]
    nb_out = None
    if len(owner):
        e_nb = _dense(params, "nb_enc", x_nb, 2, cache)
        z_nb = np.concatenate([e_bev[owner], e_nb], axis=1)
        nb_out = _dense(params, "nb_head", z_nb, 3, cache)
    return heads, nb_out, owner, cache


@dataclass
class Prediction:
    ego: list  # four TrajectoryMixture, indexed by NavCommand.index
    neighbors: list

    def for_command(self, command: NavCommand) -> TrajectoryMixture:
        return self.ego[command.index]


def forward(params: ModelParams, sample) -> Prediction:
    """Mixtures for all four ego heads and for every neighbor of one sample."""
    feats = sample if isinstance(sample, SampleFeatures) else encode_sample(sample, params.arch)
    if feats.neighbors.shape[0] > params.arch.max_neighbors:
        raise ValueError(f"{feats.neighbors.shape[0]} neighbors exceed the cap of {params.arch.max_neighbors}")
    heads, nb_out, _, _ = _forward_batch(params, [feats])
    arch = params.arch
    ego = [_to_mixtures(_decode(h, arch), arch)[0] for h in heads]
    nbs = _to_mixtures(_decode(nb_out, arch), arch) if nb_out is not None else []
    return Prediction(ego, nbs)


def loss_and_grad(params: ModelParams, feats: Sequence[SampleFeatures], alpha: float = 3.0, with_grad: bool = True):
    """Summed NLL over the batch and its gradient w.r.t. the flat parameters.

    Returns (total loss, per-sample losses (B,), grad ModelParams or None).
    The ego term only uses the head of each sample's recorded command.
    """
    arch = params.arch
    weight = LossConfig(alpha).axis_weight
    heads, nb_out, owner, cache = _forward_batch(params, feats)
    B = len(feats)
    per_sample = np.zeros(B)
    grad = ModelParams(arch) if with_grad else None

    cmd = np.array([f.command for f in feats])
    ego_rows = np.array([f.ego_target is not None for f in feats])
    d_heads = [np.zeros_like(h) for h in heads]
    if ego_rows.any():
        idx = np.nonzero(ego_rows)[0]
        out = np.stack([heads[cmd[i]][i] for i in idx])
        dec = _decode(out, arch)
        gt = np.stack([feats[i].ego_target.T for i in idx])
        loss, d_mu, d_ls, d_lp = kernels.mixture_nll(dec.means, dec.log_sigma, dec.log_pi, gt, weight, with_grad)
        per_sample[idx] += loss
        if with_grad:
            d_out = _decode_back(dec, arch, d_mu, d_ls, d_lp)
            for j, i in enumerate(idx):
                d_heads[cmd[i]][i] = d_out[j]

    d_nb_out = None
    if nb_out is not None:
        targets = [t for f in feats for t in f.neighbor_targets]
        rows = np.array([t is not None for t in targets])
        d_nb_out = np.zeros_like(nb_out)
        if rows.any():
            idx = np.nonzero(rows)[0]
            dec = _decode(nb_out[idx], arch)
            gt = np.stack([targets[i].T for i in idx])
            loss, d_mu, d_ls, d_lp = kernels.mixture_nll(dec.means, dec.log_sigma, dec.log_pi, gt, weight, with_grad)
            np.add.at(per_sample, owner[idx], loss)
            if with_grad:
                d_nb_out[idx] = _decode_back(dec, arch, d_mu, d_ls, d_lp)

    if not with_grad:
        return float(per_sample.sum()), per_sample, None

    d_e_bev = np.zeros((B, arch.bev_out))
    d_e_ego = np.zeros((B, arch.track_out))
    for c in range(N_COMMANDS):
        dz = _dense_back(params, grad, cache, f"ego_head{c}", d_heads[c])
        d_e_bev += dz[:, : arch.bev_out]
        d_e_ego += dz[:, arch.bev_out :]
    if nb_out is not None:
        dz = _dense_back(params, grad, cache, "nb_head", d_nb_out)
        np.add.at(d_e_bev, owner, dz[:, : arch.bev_out])
        _dense_back(params, grad, cache, "nb_enc", dz[:, arch.bev_out :])
    _dense_back(params, grad, cache, "bev_enc", d_e_bev)
    _dense_back(params, grad, cache, "ego_enc", d_e_ego)
    return float(per_sample.sum()), per_sample, grad


# --- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 60
    seed: int = 0
    alpha: float = 3.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # log-sigma floor raised to ``sigma_warmup_floor`` at the start and lowered
    # linearly to the architecture's floor over ``sigma_warmup_epochs``
    sigma_warmup_epochs: int = 30
    sigma_warmup_floor: float = 0.0
    # learning rate of the last epoch relative to ``lr``; geometric in between
    lr_final_ratio: float = 1.0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0 or self.alpha <= 0:
            raise ValueError("invalid training configuration")
        if self.sigma_warmup_epochs < 0:
            raise ValueError("sigma_warmup_epochs must be non-negative")
        if not 0 < self.lr_final_ratio <= 1:
            raise ValueError("lr_final_ratio must lie in (0, 1]")


def epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.epochs <= 1:
        return cfg.lr
    return cfg.lr * cfg.lr_final_ratio ** (epoch / (cfg.epochs - 1))


def sigma_floor(cfg: TrainConfig, arch: ArchConfig, epoch: int) -> float:
    """Log-sigma floor in force during ``epoch`` (0-based)."""
    if epoch >= cfg.sigma_warmup_epochs:
        return arch.log_sigma_min
    floor = max(cfg.sigma_warmup_floor, arch.log_sigma_min)
    return floor + (arch.log_sigma_min - floor) * epoch / cfg.sigma_warmup_epochs


@dataclass
class TrainState:
    params: ModelParams
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.params.size)
        if self.v is None:
            self.v = np.zeros(self.params.size)


def train_step(state: TrainState, batch: Sequence[SampleFeatures], cfg: TrainConfig) -> tuple:
    """One Adam step on the batch-mean NLL. Returns (new state, mean per-sample loss)."""
    if not batch:
        raise ValueError("empty batch")
    total, per_sample, grad = loss_and_grad(state.params, batch, cfg.alpha)
    bad = ~np.isfinite(per_sample)
    if bad.any() or not np.all(np.isfinite(grad.flat)):
        i = int(np.argmax(bad)) if bad.any() else 0
        raise NonFiniteLossError(f"non-finite loss/gradient at batch item {i} ({batch[i].tag})")
    g = grad.flat / len(batch)
    step = state.step + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = m / (1 - cfg.beta1**step)
    v_hat = v / (1 - cfg.beta2**step)
    flat = state.params.flat - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return TrainState(ModelParams(state.params.arch, flat), m, v, step), total / len(batch)


def train(
    feats: Sequence[SampleFeatures],
    arch: ArchConfig,
    cfg: TrainConfig,
    params: Optional[ModelParams] = None,
    on_epoch=None,
) -> tuple:
    """Full training loop with seeded shuffling. Returns (params, per-epoch mean losses).

    During the sigma warm-up the loss is evaluated with a raised log-sigma
    floor, which keeps every component's responsibility away from zero while
    the means are still poor. The reported losses are those under the floor
    in force for the epoch.
    """
    params = params if params is not None else ModelParams.init(arch, cfg.seed)
    if params.arch != arch:
        raise ValueError("initial parameters were built for a different architecture")
    state = TrainState(params)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    for epoch in range(cfg.epochs):
        epoch_arch = replace(arch, log_sigma_min=sigma_floor(cfg, arch, epoch))
        state.params = ModelParams(epoch_arch, state.params.flat)
        step_cfg = replace(cfg, lr=epoch_lr(cfg, epoch))
        order = rng.permutation(len(feats))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [feats[i] for i in order[start : start + cfg.batch_size]]
            state, loss = train_step(state, batch, step_cfg)
            losses.append(loss * len(batch))
        history.append(float(sum(losses) / max(len(feats), 1)))
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return ModelParams(arch, state.params.flat), history


# --- parameter files ---------------------------------------------------------


def save_params(params: ModelParams, path) -> None:
    header = PARAM_MAGIC + struct.pack("<QQ", params.arch.fingerprint(), params.size)
    Path(path).write_bytes(header + np.ascontiguousarray(params.flat, dtype="<f8").tobytes())


def load_params(path, arch: ArchConfig) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != PARAM_MAGIC:
        raise ParamFileError(f"{path}: not a PLP1 parameter file")
    fingerprint, count = struct.unpack("<QQ", raw[4:20])
    if fingerprint != arch.fingerprint():
        raise FingerprintMismatchError(f"{path}: architecture fingerprint {fingerprint:#x} does not match {arch.fingerprint():#x}")
    if len(raw) - 20 != 8 * count:
        raise ParamFileError(f"{path}: corrupt or truncated payload ({len(raw) - 20} bytes for {count} floats)")
    flat = np.frombuffer(raw[20:], dtype="<f8").astype(np.float64)
    return ModelParams(arch, flat)
