"""Small fixtures shared by the network, baseline and acceptance tests."""

import numpy as np

from polytraj import net
from polytraj.data import cut_samples, gen_synthetic

from oracles import central_difference, rel_error


def small_arch(K=2, T=5, **kw):
    """Narrow network so finite differences over many coordinates stay cheap."""
    base = dict(
        K=K, T=T, track_hidden=6, track_out=5, neighbor_hidden=6, neighbor_out=5,
        bev_pool=(3, 2), bev_hidden=6, bev_out=5, head_hidden=8, max_neighbors=3,
    )
    base.update(kw)
    return net.ArchConfig(**base)


def samples_for(arch, kind="fork", seeds=(0,), stride=13, limit=None):
    out = []
    for seed in seeds:
        log = gen_synthetic(kind, seed, {"n_neighbors": 3})
        out += cut_samples(log, stride=stride, horizon=arch.T, max_neighbors=arch.max_neighbors)
    return out[:limit] if limit else out


def features_for(arch, **kw):
    return [net.encode_sample(s, arch) for s in samples_for(arch, **kw)]


def perturbed_params(arch, seed):
    """Seeded init plus small random biases so no gradient block is trivially zero.

    Output biases are then warm-started like a partly trained model: the
    linear x coefficient matches a speed of 8 to 12 m/s and log-sigma lies in
    [1, 2.5] (sigma of a few metres). A cold 4 s head has losses near 1e4,
    where the rounding error of a 1e-5 central difference (about eps * loss / h)
    exceeds the tolerance on its own.
    """
    p = net.ModelParams.init(arch, seed)
    rng = np.random.default_rng(seed + 1000)
    for name, shape in net.layout(arch):
        if len(shape) == 1:
            p[name][...] = rng.normal(scale=0.1, size=shape)
        if name.endswith(".b3") and "head" in name:
            horizon = arch.T * arch.dt
            coeffs = p[name][arch.K : 9 * arch.K].reshape(arch.K, 2, 4)
            coeffs[:, 0, 3] = rng.uniform(8.0, 12.0, arch.K) * horizon / arch.coeff_scale
            p[name][9 * arch.K :] = rng.uniform(1.0, 2.5, size=2 * arch.K * arch.T)
    return p


def fd_max_rel_error(params, feats, max_coords=1500, seed=0, h=1e-5):
    """Largest relative gap between analytic and central-difference gradients.

    Every coordinate is checked when the model is small; otherwise a seeded
    random subset that always includes a few entries of every tensor.
    """
    _, _, grad = net.loss_and_grad(params, feats)
    arch = params.arch
    if params.size <= max_coords:
        idx = np.arange(params.size)
    else:
        rng = np.random.default_rng(seed)
        must = []
        for name, (start, shape) in params.offsets.items():
            size = int(np.prod(shape))
            must += list(start + rng.choice(size, size=min(size, 4), replace=False))
        rest = rng.choice(params.size, size=max_coords - len(must), replace=False)
        idx = np.unique(np.concatenate([must, rest]).astype(np.int64))
    base = params.flat.copy()

    def f(sub):
        x = base.copy()
        x[idx] = sub
        return net.loss_and_grad(net.ModelParams(arch, x), feats, with_grad=False)[0]

    numeric = central_difference(f, base[idx], h)
    return float(rel_error(grad.flat[idx], numeric).max()), len(idx)
