"""Independent reference implementations used as test oracles.

Nothing here imports the code under test beyond plain data containers; the
metric oracle loops over every (agent, component, step) explicitly.
"""

import math

import numpy as np


def poly_value(a, t):
    """Zero-constant quartic by explicit powers (no Horner)."""
    return a[0] * t**4 + a[1] * t**3 + a[2] * t**2 + a[3] * t


def mean_paths(coeffs, dt, T):
    """(K, T, 2) mean paths from (K, 2, 4) coefficients, one scalar at a time."""
    K = len(coeffs)
    out = np.zeros((K, T, 2))
    for k in range(K):
        for i in range(T):
            t = (i + 1) * dt
            for a in range(2):
                out[k, i, a] = poly_value(coeffs[k][a], t)
    return out


def _dist(p, q, axis=None):
    if axis is None:
        return math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2)
    return abs(p[axis] - q[axis])


def _argmax_first(pi):
    best = 0
    for k in range(1, len(pi)):
        if pi[k] > pi[best]:
            best = k
    return best


def brute_metrics(agents, axis=None, top_ks=(1, 5, 10), radius=2.0):
    """agents: list of (pi, paths (K,T,2), gt (T,2)). Returns a dict of metric values."""
    N = len(agents)
    T = len(agents[0][2])
    s = {"minMSD": 0.0, "minADE": 0.0, "minFDE": 0.0, "confMSD": 0.0, "confADE": 0.0, "confFDE": 0.0, "weightFDE": 0.0}
    miss = {k: 0 for k in top_ks}
    for pi, paths, gt in agents:
        K = len(pi)
        msd, ade, fde = [], [], []
        for k in range(K):
            sq = 0.0
            nrm = 0.0
            for t in range(T):
                d = _dist(paths[k][t], gt[t], axis)
                sq += d * d
                nrm += d
            msd.append(sq)
            ade.append(nrm)
            fde.append(_dist(paths[k][T - 1], gt[T - 1], axis))
        s["minMSD"] += min(msd) / T
        s["minADE"] += min(ade) / T
        s["minFDE"] += min(fde)
        c = _argmax_first(pi)
        s["confMSD"] += msd[c] / T
        s["confADE"] += ade[c] / T
        s["confFDE"] += fde[c]
        s["weightFDE"] += sum(pi[k] * fde[k] for k in range(K))
        order = sorted(range(K), key=lambda k: (-pi[k], k))
        for top in top_ks:
            chosen = order[: min(top, K)]
            if all(_dist(paths[k][T - 1], gt[T - 1]) > radius for k in chosen):
                miss[top] += 1
    out = {name: v / N for name, v in s.items()}
    for top in top_ks:
        out[f"missRate@2m_top{top}"] = miss[top] / N
    return out


def normal_logpdf(x, mu, sigma):
    return -0.5 * math.log(2 * math.pi) - math.log(sigma) - 0.5 * ((x - mu) / sigma) ** 2


def brute_nll(pi, paths, sigma, gt, alpha):
    """Loss of one agent with scalar loops; sigma (K, 2, T), paths (K, T, 2), gt (T, 2)."""
    K, T = len(pi), len(gt)
    total = 0.0
    for t in range(T):
        for a, w in ((0, 1.0), (1, alpha)):
            p = sum(pi[k] * math.exp(normal_logpdf(gt[t][a], paths[k][t][a], sigma[k][a][t])) for k in range(K))
            total -= w * math.log(p)
    return total


def central_difference(f, x, h=1e-5):
    """Gradient of scalar f at the flat vector x by central differences."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, n, floor=1e-3):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
