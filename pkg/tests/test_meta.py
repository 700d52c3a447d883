"""Label correction loop: hypergradient exactness, reduction, recovery."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from cofprm import labeler, meta, prm
from cofprm.corpus import LabeledPrefix
from cofprm.labeler import DatasetBundle, SyntheticSpec
from cofprm.meta import MetaConfig
from cofprm.prm import FeatureVector
from cofprm.util import derive_seed


def random_setup(seed, architecture="linear", n_b=6, n_meta=9, d=4, h=3):
    rng = np.random.default_rng(seed)
    params = prm.init_params(architecture, d=d, h=h, init_seed=seed)
    params = params.with_weights(rng.normal(scale=0.5, size=params.weights.shape))
    X_b = rng.normal(size=(n_b, d))
    y_b = rng.uniform(size=n_b)
    X_meta = rng.normal(size=(n_meta, d))
    y_meta = rng.integers(0, 2, size=n_meta).astype(np.float64)
    return params, X_b, y_b, X_meta, y_meta


def fd_hypergrad(params, X_b, y_b, X_meta, y_meta, inner_lr, weight_decay, eps=1e-6):
    """Finite differences of the post-step meta loss over the batch labels."""
    grad = np.empty_like(y_b)
    for i in range(y_b.shape[0]):
        bump = np.zeros_like(y_b)
        bump[i] = eps
        lo_p, _ = meta.inner_step(params, X_b, y_b - bump, inner_lr, weight_decay)
        hi_p, _ = meta.inner_step(params, X_b, y_b + bump, inner_lr, weight_decay)
        lo = meta.meta_loss(lo_p, X_meta, y_meta)
        hi = meta.meta_loss(hi_p, X_meta, y_meta)
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


class TestHypergradient:
    @pytest.mark.parametrize("architecture", ["linear", "mlp1"])
    @pytest.mark.parametrize("weight_decay", [0.0, 0.01])
    def test_matches_finite_differences(self, architecture, weight_decay):
        for seed in range(4):
            params, X_b, y_b, X_meta, y_meta = random_setup(seed, architecture)
            analytic = meta.hypergrad_labels(
                params, X_b, y_b, X_meta, y_meta, inner_lr=0.05, weight_decay=weight_decay
            )
            fd = fd_hypergrad(params, X_b, y_b, X_meta, y_meta, 0.05, weight_decay)
            rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-4, (architecture, seed, rel)

    def test_descent_direction_reduces_meta_loss(self):
        # First-order check: stepping labels against the hypergradient must
        # lower the post-inner-step meta loss for a small enough rate.
        params, X_b, y_b, X_meta, y_meta = random_setup(3)
        hyper = meta.hypergrad_labels(params, X_b, y_b, X_meta, y_meta, 0.05, 0.0)
        before_p, _ = meta.inner_step(params, X_b, y_b, 0.05, 0.0)
        before = meta.meta_loss(before_p, X_meta, y_meta)
        moved = np.clip(y_b - 0.05 * hyper / max(np.linalg.norm(hyper), 1e-12), 0.0, 1.0)
        after_p, _ = meta.inner_step(params, X_b, moved, 0.05, 0.0)
        after = meta.meta_loss(after_p, X_meta, y_meta)
        assert after < before

    def test_scales_linearly_with_inner_lr(self):
        params, X_b, y_b, X_meta, y_meta = random_setup(5)
        one = meta.hypergrad_labels(params, X_b, y_b, X_meta, y_meta, 1e-5, 0.0)
        two = meta.hypergrad_labels(params, X_b, y_b, X_meta, y_meta, 2e-5, 0.0)
        # d(theta')/dY is proportional to lr; the meta gradient barely moves
        # for a tiny step, so the ratio is 2 to first order.
        assert np.allclose(two, 2.0 * one, rtol=1e-3)

    def test_meta_loss_matches_plain_bce(self):
        params, _, _, X_meta, y_meta = random_setup(8)
        want = prm.loss_and_grad(params, X_meta, y_meta, weight_decay=0.0).loss
        assert meta.meta_loss(params, X_meta, y_meta) == want

    def test_empty_meta_pool_rejected(self):
        params, X_b, y_b, _, _ = random_setup(1)
        with pytest.raises(ValueError, match="meta pool"):
            meta.meta_loss(params, np.empty((0, 4)), np.empty(0))


class TestBatchStream:
    def test_each_epoch_is_a_permutation(self):
        rng = np.random.default_rng(0)
        stream = meta.batch_stream(10, 3, rng)
        epoch = np.concatenate([next(stream) for _ in range(4)])
        assert sorted(epoch.tolist()) == list(range(10))
        assert [len(b) for b in [epoch[0:3], epoch[3:6], epoch[6:9], epoch[9:]]] == [3, 3, 3, 1]

    def test_deterministic_under_seed(self):
        a = meta.batch_stream(7, 2, np.random.default_rng(4))
        b = meta.batch_stream(7, 2, np.random.default_rng(4))
        for _ in range(9):
            assert np.array_equal(next(a), next(b))

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            next(meta.batch_stream(0, 2, np.random.default_rng(0)))


class TestConfigValidation:
    def test_multi_step_unroll_rejected(self):
        with pytest.raises(ValueError, match="single-step"):
            MetaConfig(unroll_steps=2)

    def test_nonpositive_inner_lr_rejected(self):
        with pytest.raises(ValueError, match="inner_lr"):
            MetaConfig(inner_lr=0.0)

    def test_negative_meta_lr_rejected(self):
        with pytest.raises(ValueError, match="meta_lr"):
            MetaConfig(meta_lr=-0.1)


def synth_bundle(seed=0, **overrides):
    spec = SyntheticSpec(d=4, n_train=24, n_meta=16, seed=seed, **overrides)
    return labeler.make_synthetic(spec)


class TestCorrect:
    def test_trace_lengths_match_iterations(self):
        out = meta.correct(synth_bundle().bundle, MetaConfig(iterations=37, seed=1))
        assert out.iterations == 37
        assert len(out.meta_loss) == len(out.mean_abs_dy) == 37
        assert out.final_labels.shape == (24,)

    def test_labels_stay_in_unit_interval(self):
        cfg = MetaConfig(inner_lr=0.5, meta_lr=50.0, iterations=200, seed=0)
        out = meta.correct(synth_bundle().bundle, cfg)
        assert np.all(out.final_labels >= 0.0) and np.all(out.final_labels <= 1.0)

    def test_meta_rows_never_move(self):
        synth = synth_bundle()
        before = [r.label for r in synth.bundle.meta]
        meta.correct(synth.bundle, MetaConfig(iterations=50, inner_lr=0.3, meta_lr=5.0))
        assert [r.label for r in synth.bundle.meta] == before

    def test_zero_meta_lr_reduces_to_plain_sgd_bitwise(self):
        synth = synth_bundle(seed=2)
        cfg = MetaConfig(inner_lr=0.1, meta_lr=0.0, iterations=120, seed=9)
        out = meta.correct(synth.bundle, cfg)
        X, y = prm.rows_to_arrays(list(synth.bundle.train))
        plain_params, plain_losses = meta.train_plain(X, y, cfg, schema_version=0)
        assert np.array_equal(out.final_labels, y)  # labels untouched
        assert np.array_equal(out.final_params.weights, plain_params.weights)
        assert out.train_loss == plain_losses

    def test_clean_labels_barely_move(self):
        # With no injected noise the meta signal should not push labels far.
        synth = synth_bundle(seed=3, noise_param=0.0)
        cfg = MetaConfig(inner_lr=0.3, meta_lr=8.0, iterations=300, seed=3)
        out = meta.correct(synth.bundle, cfg)
        y0 = np.array([r.label for r in synth.bundle.train])
        assert np.abs(out.final_labels - y0).mean() < 0.15

    def test_recovers_flipped_labels(self):
        spec = SyntheticSpec(d=6, n_train=80, n_meta=60, noise="flip", noise_param=0.3, seed=5)
        synth = labeler.make_synthetic(spec)
        cfg = MetaConfig(
            inner_lr=0.3, meta_lr=8.0, iterations=400, meta_batch_size=60, seed=5
        )
        out = meta.correct(synth.bundle, cfg)
        y0 = np.array([r.label for r in synth.bundle.train])
        before = np.abs(y0 - synth.y_true_train).mean()
        after = np.abs(out.final_labels - synth.y_true_train).mean()
        assert after < before

    def test_determinism(self):
        cfg = MetaConfig(iterations=40, inner_lr=0.2, meta_lr=2.0, seed=11)
        a = meta.correct(synth_bundle(seed=4).bundle, cfg)
        b = meta.correct(synth_bundle(seed=4).bundle, cfg)
        assert np.array_equal(a.final_labels, b.final_labels)
        assert np.array_equal(a.final_params.weights, b.final_params.weights)
        assert a.train_loss == b.train_loss

    def test_rejects_unlearnable_train_rows(self):
        row = LabeledPrefix("t", 1, 1.0, "unit_test", False, features=FeatureVector((1.0,)))
        meta_row = LabeledPrefix("m", 1, 1.0, "unit_test", False, features=FeatureVector((1.0,)))
        bundle = DatasetBundle(train=(row,), meta=(meta_row,))
        with pytest.raises(ValueError, match="learnable mc row"):
            meta.correct(bundle, MetaConfig())

    def test_rejects_learnable_meta_rows(self):
        row = LabeledPrefix("t", 1, 0.5, "mc", True, features=FeatureVector((1.0,)))
        bad_meta = LabeledPrefix("m", 1, 0.5, "mc", True, features=FeatureVector((1.0,)))
        bundle = DatasetBundle(train=(row,), meta=(bad_meta,))
        with pytest.raises(ValueError, match="frozen unit_test row"):
            meta.correct(bundle, MetaConfig())

    def test_mlp_architecture_runs(self):
        cfg = MetaConfig(iterations=20, architecture="mlp1", hidden=6, inner_lr=0.1, meta_lr=1.0)
        out = meta.correct(synth_bundle().bundle, cfg)
        assert out.final_params.architecture == "mlp1"
        assert np.all(np.isfinite(out.final_params.weights))


class TestTrainPlain:
    def test_loss_decreases_overall(self):
        synth = synth_bundle(seed=6, noise_param=0.0)
        X, y = prm.rows_to_arrays(list(synth.bundle.train))
        _, losses = meta.train_plain(X, y, MetaConfig(inner_lr=0.3, iterations=300), schema_version=0)
        assert np.mean(losses[-20:]) < np.mean(losses[:20])

    def test_adam_differs_from_sgd(self):
        synth = synth_bundle(seed=7)
        X, y = prm.rows_to_arrays(list(synth.bundle.train))
        cfg = MetaConfig(inner_lr=0.05, iterations=50)
        sgd_params, _ = meta.train_plain(X, y, cfg, optimizer="sgd", schema_version=0)
        adam_params, _ = meta.train_plain(X, y, cfg, optimizer="adam", schema_version=0)
        assert not np.array_equal(sgd_params.weights, adam_params.weights)

    def test_unknown_optimizer_rejected(self):
        with pytest.raises(ValueError, match="optimizer"):
            meta.train_plain(np.ones((2, 1)), np.ones(2), MetaConfig(), optimizer="lion")

    def test_shares_seed_derivations_with_correct(self):
        # Both entry points must consume identical init and batch streams.
        cfg = MetaConfig(seed=13)
        a = prm.init_params("linear", d=3, init_seed=derive_seed(13, "init"))
        X = np.zeros((4, 3))
        y = np.full(4, 0.5)
        b, _ = meta.train_plain(X, y, dataclasses.replace(cfg, iterations=1, inner_lr=1e-9))
        assert np.allclose(a.weights, b.weights, atol=1e-7)
