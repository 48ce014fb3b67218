from dataclasses import replace

import numpy as np
import pytest

from polytraj import net
from polytraj.data import NavCommand

from support import features_for, fd_max_rel_error, perturbed_params, samples_for, small_arch


@pytest.fixture(scope="module")
def arch():
    return small_arch(K=3, T=6)


@pytest.fixture(scope="module")
def samples(arch):
    return samples_for(arch, seeds=(0, 1), limit=6)


class TestLayout:
    def test_flat_size_matches_layout(self, arch):
        p = net.ModelParams(arch)
        assert p.size == sum(int(np.prod(s)) for _, s in net.layout(arch))

    def test_views_share_storage(self, arch):
        p = net.ModelParams(arch)
        p["nb_head.b3"][0] = 7.0
        start, _ = p.offsets["nb_head.b3"]
        assert p.flat[start] == 7.0

    def test_four_command_heads(self, arch):
        names = {n.split(".")[0] for n, _ in net.layout(arch)}
        assert {f"ego_head{c}" for c in range(4)} <= names and "nb_head" in names

    def test_init_deterministic(self, arch):
        a, b = net.ModelParams.init(arch, 5), net.ModelParams.init(arch, 5)
        assert np.array_equal(a.flat, b.flat)
        assert not np.array_equal(a.flat, net.ModelParams.init(arch, 6).flat)
        assert np.all(np.isfinite(a.flat))

    def test_wrong_flat_length(self, arch):
        with pytest.raises(ValueError):
            net.ModelParams(arch, np.zeros(3))


class TestForward:
    def test_mixture_invariants(self, arch, samples):
        p = perturbed_params(arch, 0)
        for s in samples:
            pred = net.forward(p, s)
            assert len(pred.ego) == 4 and len(pred.neighbors) == len(s.neighbor_pasts)
            for m in pred.ego + pred.neighbors:
                assert m.K == arch.K and m.T == arch.T
                assert abs(m.pi.sum() - 1) < 1e-12
                np.testing.assert_allclose(m.mean_at(0.0), 0.0)
                assert np.all(m.sigma >= np.exp(arch.log_sigma_min) - 1e-15)

    def test_deterministic(self, arch, samples):
        p = perturbed_params(arch, 1)
        a, b = net.forward(p, samples[0]), net.forward(p, samples[0])
        for x, y in zip(a.ego + a.neighbors, b.ego + b.neighbors):
            assert np.array_equal(x.coeffs, y.coeffs) and np.array_equal(x.sigma, y.sigma)

    def test_command_selects_head(self, arch, samples):
        p = perturbed_params(arch, 2)
        pred = net.forward(p, samples[0])
        pred2 = net.forward(p, replace(samples[0], command=NavCommand.RIGHT))
        # heads do not read the command; it only picks one downstream
        for c in range(4):
            assert np.array_equal(pred.ego[c].coeffs, pred2.ego[c].coeffs)
        assert pred2.for_command(NavCommand.RIGHT) is pred2.ego[NavCommand.RIGHT.index]

    def test_neighbor_permutation(self, arch, samples):
        p = perturbed_params(arch, 3)
        f = net.encode_sample(next(s for s in samples if len(s.neighbor_pasts) >= 2), arch)
        g = replace(f, neighbors=f.neighbors[::-1].copy(), neighbor_targets=f.neighbor_targets[::-1])
        a, b = net.forward(p, f), net.forward(p, g)
        for x, y in zip(a.ego, b.ego):
            np.testing.assert_array_equal(x.coeffs, y.coeffs)
        for x, y in zip(a.neighbors, b.neighbors[::-1]):
            np.testing.assert_allclose(x.coeffs, y.coeffs, rtol=1e-15, atol=1e-15)

    def test_duplicated_neighbors_identical(self, arch, samples):
        p = perturbed_params(arch, 4)
        f = net.encode_sample(samples[0], arch)
        g = replace(f, neighbors=np.vstack([f.neighbors[:1], f.neighbors[:1]]), neighbor_targets=[None, None])
        a, b = net.forward(p, g).neighbors
        np.testing.assert_array_equal(a.coeffs, b.coeffs)
        np.testing.assert_array_equal(a.sigma, b.sigma)

    def test_zero_bev_locality(self, samples):
        arch = small_arch(K=3, T=6, use_bev=False)
        p = perturbed_params(arch, 5)
        f = net.encode_sample(samples[0], arch)
        g = replace(f, neighbors=f.neighbors[:0], neighbor_targets=[])
        assert not f.bev.any()
        for x, y in zip(net.forward(p, f).ego, net.forward(p, g).ego):
            np.testing.assert_array_equal(x.coeffs, y.coeffs)

    def test_too_many_neighbors(self, arch, samples):
        f = net.encode_sample(samples[0], arch)
        g = replace(f, neighbors=np.repeat(f.neighbors[:1], arch.max_neighbors + 1, 0))
        with pytest.raises(ValueError, match="cap"):
            net.forward(net.ModelParams(arch), g)


class TestGradient:
    @pytest.mark.parametrize("K,T", [(1, 1), (2, 5), (3, 8)])
    def test_finite_differences(self, K, T):
        a = small_arch(K=K, T=T)
        err, n = fd_max_rel_error(perturbed_params(a, K + T), features_for(a, limit=2), max_coords=600)
        assert err < 1e-4, f"max relative error {err:.2e} over {n} coordinates"

    def test_batch_loss_is_sum(self, arch, samples):
        p = perturbed_params(arch, 6)
        feats = [net.encode_sample(s, arch) for s in samples]
        total, per, _ = net.loss_and_grad(p, feats, with_grad=False)
        singles = [net.loss_and_grad(p, [f], with_grad=False)[0] for f in feats]
        np.testing.assert_allclose(per, singles, rtol=1e-12)
        assert total == pytest.approx(sum(singles), rel=1e-12)


class TestTraining:
    def test_zero_lr_keeps_params(self, arch, samples):
        p = perturbed_params(arch, 7)
        feats = [net.encode_sample(s, arch) for s in samples]
        state, loss = net.train_step(net.TrainState(p.copy()), feats, net.TrainConfig(lr=0.0))
        assert np.array_equal(state.params.flat, p.flat)
        assert loss == pytest.approx(net.loss_and_grad(p, feats, with_grad=False)[0] / len(feats), rel=1e-12)

    def test_empty_batch(self, arch):
        with pytest.raises(ValueError):
            net.train_step(net.TrainState(net.ModelParams(arch)), [], net.TrainConfig())

    def test_non_finite_names_sample(self, arch, samples):
        f = net.encode_sample(samples[0], arch)
        bad = replace(f, ego_target=np.full_like(f.ego_target, np.inf))
        with pytest.raises(net.NonFiniteLossError, match=f.tag):
            net.train_step(net.TrainState(perturbed_params(arch, 0)), [bad], net.TrainConfig())

    def test_step_deterministic(self, arch, samples):
        feats = [net.encode_sample(s, arch) for s in samples]
        cfg = net.TrainConfig()
        a, _ = net.train_step(net.TrainState(perturbed_params(arch, 8)), feats, cfg)
        b, _ = net.train_step(net.TrainState(perturbed_params(arch, 8)), feats, cfg)
        assert np.array_equal(a.params.flat, b.params.flat) and a.step == b.step == 1

    def test_loss_decreases(self):
        """Two hundred steps on a fixed batch: every 50-step window mean improves on the previous one."""
        arch = small_arch(K=2, T=10)
        feats = features_for(arch, kind="straight", seeds=(0, 1), stride=20)
        state = net.TrainState(net.ModelParams.init(arch, 0))
        cfg = net.TrainConfig(lr=3e-3)
        losses = []
        for _ in range(200):
            state, loss = net.train_step(state, feats, cfg)
            losses.append(loss)
        windows = np.array(losses).reshape(4, 50).mean(axis=1)
        assert np.all(np.diff(windows) < 0), windows

    def test_train_reproducible(self, arch, samples):
        feats = [net.encode_sample(s, arch) for s in samples]
        cfg = net.TrainConfig(epochs=3, batch_size=4, sigma_warmup_epochs=2)
        p1, h1 = net.train(feats, arch, cfg)
        p2, h2 = net.train(feats, arch, cfg)
        assert np.array_equal(p1.flat, p2.flat) and h1 == h2
        assert p1.arch == arch

    def test_train_rejects_foreign_params(self, arch, samples):
        feats = [net.encode_sample(s, arch) for s in samples]
        with pytest.raises(ValueError, match="architecture"):
            net.train(feats, arch, net.TrainConfig(epochs=1), net.ModelParams(small_arch(K=1, T=6)))


class TestSigmaWarmup:
    def test_floor_schedule(self):
        arch = net.ArchConfig(K=1, T=1)
        cfg = net.TrainConfig(sigma_warmup_epochs=4, sigma_warmup_floor=1.0)
        assert [net.sigma_floor(cfg, arch, e) for e in range(6)] == [1.0, 0.0, -1.0, -2.0, -3.0, -3.0]

    def test_disabled(self):
        arch = net.ArchConfig(K=1, T=1)
        assert net.sigma_floor(net.TrainConfig(sigma_warmup_epochs=0), arch, 0) == arch.log_sigma_min

    def test_floor_below_arch_is_ignored(self):
        arch = net.ArchConfig(K=1, T=1)
        cfg = net.TrainConfig(sigma_warmup_epochs=2, sigma_warmup_floor=-5.0)
        assert net.sigma_floor(cfg, arch, 0) == arch.log_sigma_min


class TestParamFile:
    def test_round_trip(self, arch, tmp_path):
        p = perturbed_params(arch, 9)
        net.save_params(p, tmp_path / "p.bin")
        raw = (tmp_path / "p.bin").read_bytes()
        assert raw[:4] == b"PLP1" and len(raw) == 20 + 8 * p.size
        assert np.array_equal(net.load_params(tmp_path / "p.bin", arch).flat, p.flat)

    def test_fingerprint_mismatch(self, arch, tmp_path):
        net.save_params(net.ModelParams(arch), tmp_path / "p.bin")
        with pytest.raises(net.FingerprintMismatchError):
            net.load_params(tmp_path / "p.bin", replace(arch, K=4))

    def test_truncated(self, arch, tmp_path):
        net.save_params(net.ModelParams(arch), tmp_path / "p.bin")
        raw = (tmp_path / "p.bin").read_bytes()
        (tmp_path / "p.bin").write_bytes(raw[:-8])
        with pytest.raises(net.ParamFileError, match="truncated"):
            net.load_params(tmp_path / "p.bin", arch)

    def test_bad_magic(self, arch, tmp_path):
        (tmp_path / "p.bin").write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(net.ParamFileError, match="PLP1"):
            net.load_params(tmp_path / "p.bin", arch)
