import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polytraj import kernels

from oracles import normal_logpdf

py = kernels.get_backend("python")
try:
    cy = kernels.get_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def random_batch(rng, R=4, K=3, T=7):
    means = rng.normal(scale=3.0, size=(R, K, 2, T))
    log_sigma = rng.uniform(-3.0, 2.0, size=(R, K, 2, T))
    logits = rng.normal(size=(R, K))
    log_pi = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    gt = rng.normal(scale=3.0, size=(R, 2, T))
    return means, log_sigma, log_pi, gt, np.array([1.0, 3.0])


class TestPythonReference:
    def test_matches_direct_sum(self, rng):
        means, log_sigma, log_pi, gt, w = random_batch(rng, R=2, K=2, T=3)
        log_sigma = np.clip(log_sigma, 0.5, None)  # keep plain densities away from underflow
        loss = py.mixture_nll(means, log_sigma, log_pi, gt, w, with_grad=False)[0]
        for r in range(2):
            total = 0.0
            for a in range(2):
                for t in range(3):
                    dens = sum(
                        np.exp(log_pi[r, k]) * np.exp(normal_logpdf(gt[r, a, t], means[r, k, a, t], np.exp(log_sigma[r, k, a, t])))
                        for k in range(2)
                    )
                    total -= w[a] * np.log(dens)
            assert loss[r] == pytest.approx(total, rel=1e-12)

    def test_grid_drops_out_of_range(self):
        sx, sy, cnt = py.lidar_grid([[60.5, 0.0], [-60.5, 0.0], [0.0, 10.49], [0.0, -10.6]])
        assert cnt.sum() == 2 and cnt[0, 10] == 1 and cnt[60, 20] == 1
        assert sx[0, 10] == -60.5 and sy[60, 20] == 10.49

    def test_grid_empty(self):
        assert all(not a.any() for a in py.lidar_grid(np.zeros((0, 2))))


@needs_cython
class TestBackendsAgree:
    """The compiled kernels reproduce the numpy reference to 1e-12."""

    @pytest.mark.parametrize("K,T", [(1, 1), (2, 5), (12, 40)])
    def test_nll_and_grad(self, K, T):
        rng = np.random.default_rng(K * 100 + T)
        args = random_batch(rng, R=5, K=K, T=T)
        for a, b in zip(py.mixture_nll(*args), cy.mixture_nll(*args)):
            np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12)

    def test_nll_without_grad(self, rng):
        args = random_batch(rng)
        a, b = py.mixture_nll(*args, with_grad=False), cy.mixture_nll(*args, with_grad=False)
        np.testing.assert_allclose(b[0], a[0], rtol=1e-12)
        assert b[1:] == (None, None, None)

    def test_far_outlier(self):
        rng = np.random.default_rng(3)
        means, log_sigma, log_pi, gt, w = random_batch(rng)
        gt[0, 0, 0] = 1e4
        np.testing.assert_allclose(cy.mixture_nll(means, log_sigma, log_pi, gt, w)[0], py.mixture_nll(means, log_sigma, log_pi, gt, w)[0], rtol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 400), st.integers(0, 2**31 - 1))
    def test_lidar_grid(self, n, seed):
        rng = np.random.default_rng(seed)
        xy = rng.uniform([-70.0, -14.0], [70.0, 14.0], size=(n, 2))
        for a, b in zip(py.lidar_grid(xy), cy.lidar_grid(xy)):
            np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_python_switch():
    env = dict(os.environ, POLYTRAJ_PURE_PYTHON="1")
    r = subprocess.run(
        [sys.executable, "-c", "from polytraj import kernels; print(kernels.BACKEND)"],
        capture_output=True, text=True, env=env,
    )
    assert r.stdout.strip() == "python"
