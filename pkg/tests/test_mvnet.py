import math

import numpy as np
import pytest

from entscope import dataset as ds
from entscope import mvnet
from entscope.mvnet import (AdamState, Batch, LossConfig, ModelParams, PlateauScheduler, TrainConfig,
                            TripletBatch, adam_step, clip_gradients, contrastive_loss,
                            cosine_similarity, cross_entropy, forward, global_norm, init_model,
                            loss_and_grad, total_loss)

import gradcheck


class TestInit:
    def test_shapes_and_bounds(self):
        p = init_model(4, 8, seed=1)
        assert p.W1.shape == (256, 28) and p.W2.shape == (128, 256) and p.W3.shape == (8, 128)
        for w in (p.W1, p.W2, p.W3):
            assert np.abs(w).max() < math.sqrt(6 / w.shape[1])
        for b in (p.b1, p.b2, p.b3):
            assert not b.any()

    def test_deterministic(self):
        assert init_model(3, 4, seed=9).equal(init_model(3, 4, seed=9))
        assert not init_model(3, 4, seed=9).equal(init_model(3, 4, seed=10))

    def test_bad_args(self):
        with pytest.raises(ValueError):
            init_model(3, 1)


class TestForward:
    def test_single_view_pool(self, rng):
        p = init_model(2, 3, seed=0)
        v = rng.random((1, 10))
        logits, r = forward(p, v)
        e = np.maximum(p.W1 @ v[0] + p.b1, 0)
        r_ref = np.maximum(p.W2 @ e + p.b2, 0)
        np.testing.assert_allclose(r, r_ref, atol=1e-13)
        np.testing.assert_allclose(logits, p.W3 @ r_ref + p.b3, atol=1e-13)

    def test_permutation_invariance(self, rng):
        p = init_model(3, 4, seed=2)
        views = rng.random((5, 17))
        base = forward(p, views)
        for _ in range(5):
            perm = rng.permutation(5)
            out = forward(p, views[perm])
            assert np.array_equal(out[0], base[0]) and np.array_equal(out[1], base[1])

    def test_zero_params_uniform(self):
        p = init_model(2, 5, seed=0).zeros_like()
        logits, _ = forward(p, np.ones((2, 10)))
        assert not logits.any()
        np.testing.assert_allclose(mvnet.softmax(logits), 0.2, atol=1e-15)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            forward(init_model(2, 3), np.ones((2, 11)))

    def test_train_mode_returns_pre_dropout_rep(self, rng):
        p = init_model(2, 3, seed=0)
        v = rng.random((2, 10))
        _, r_eval = forward(p, v)
        _, r_train = forward(p, v, mode="train", dropout_seed=4)
        assert np.array_equal(r_eval, r_train)

    def test_dropout_inverted_scaling(self, rng):
        p = init_model(2, 3, seed=0)
        v = rng.random((2, 10))
        _, r = forward(p, v)
        masks = np.stack([mvnet.dropout_mask((1, 128), 0.5, s)[0] for s in range(10000)])
        mean = (masks * r).mean(axis=0)
        alive = r > 1e-3
        np.testing.assert_allclose(mean[alive], r[alive], rtol=0.05)
        # aggregate over units, the 2% bound is tight
        assert abs(mean[alive].sum() / r[alive].sum() - 1) < 0.02


class TestLosses:
    def test_ce_dominant(self):
        expected = math.log(1 + 2 * math.exp(-10))
        assert cross_entropy(np.array([10.0, 0, 0]), 0) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(9.079e-5, rel=1e-3)

    def test_ce_uniform(self):
        assert cross_entropy(np.zeros(8), 3) == pytest.approx(math.log(8), abs=1e-12)
        assert round(math.log(8), 4) == 2.0794

    def test_ce_nonnegative_and_stable(self, rng):
        logits = rng.normal(0, 300, size=(50, 6))
        ce = cross_entropy(logits, rng.integers(0, 6, 50))
        assert np.all(ce >= 0) and np.all(np.isfinite(ce))
        np.testing.assert_allclose(mvnet.softmax(logits).sum(axis=1), 1, atol=1e-12)

    def test_cosine(self):
        x = np.array([0.6, 0.8])
        assert cosine_similarity(x, x) == pytest.approx(1 / (1 + 1e-8), abs=1e-15)
        assert cosine_similarity(x, np.array([-0.8, 0.6])) == pytest.approx(0, abs=1e-15)
        assert cosine_similarity(np.zeros(2), x) == 0.0

    def test_contrastive_examples(self):
        a = np.array([[1.0, 0.0]])
        assert contrastive_loss(TripletBatch(a, a, -a)) == pytest.approx(0, abs=1e-7)
        ortho = np.array([[0.0, 1.0]])
        assert contrastive_loss(TripletBatch(a, ortho, ortho)) == pytest.approx(1.0)
        empty = TripletBatch(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))
        assert not empty.valid and contrastive_loss(empty) == 0.0

    def test_contrastive_bounds(self, rng):
        for _ in range(50):
            t = TripletBatch(*(rng.normal(size=(7, 4)) for _ in range(3)))
            v = contrastive_loss(t, margin=1.0)
            assert 0 <= v <= 3

    def test_mine_triplets(self):
        y = np.array([0, 0, 1, 1, 2])
        a, p, n = mvnet.mine_triplets(y, seed=3)
        assert a.tolist() == [0, 1, 2, 3]  # the lone class-2 sample has no positive
        assert all(y[i] == y[j] and i != j for i, j in zip(a, p))
        assert all(y[i] != y[j] for i, j in zip(a, n))
        a, _, _ = mvnet.mine_triplets(np.zeros(6, int), seed=1)
        assert len(a) == 0

    def test_total_loss_lambda_zero(self, rng):
        params, batch = gradcheck.random_point(rng, LossConfig())
        value, _ = loss_and_grad(params, batch, LossConfig(lam=0.0), need_grad=False)
        assert value.total == value.ce

    def test_total_loss_arithmetic(self):
        assert 2.0794 + 0.003 * 1 == pytest.approx(2.0824, abs=1e-12)

    def test_total_combines_terms(self, rng):
        cfg = LossConfig()
        params, batch = gradcheck.random_point(rng, cfg)
        value, _ = loss_and_grad(params, batch, cfg, need_grad=False)
        assert value.total == pytest.approx(value.ce + 0.003 * value.cont, rel=1e-15)
        assert value.n_triplets == len(batch.y)

    def test_single_class_batch(self, rng):
        params = init_model(1, 3, seed=0, input_dim=10, hidden=(8, 6))
        y = np.zeros(4, dtype=int)
        batch = Batch(rng.normal(size=(4, 2, 10)), y, None, mvnet.mine_triplets(y, 0))
        value, _ = loss_and_grad(params, batch, LossConfig(), need_grad=False)
        assert value.n_triplets == 0 and value.total == value.ce


class TestGradients:
    def test_matches_finite_differences(self, rng):
        worst = max(max(gradcheck.check_point(rng).values()) for _ in range(10))
        assert worst < 1e-4

    def test_contrastive_path_alone(self, rng):
        # heavy lambda so the hinge term dominates the checked gradient
        cfg = LossConfig(lam=1.0)
        worst = max(max(gradcheck.check_point(rng, cfg).values()) for _ in range(5))
        assert worst < 1e-4

    def test_zero_loss_zero_grad(self):
        eye = np.eye(3)
        z = np.zeros(3)
        params = ModelParams(100 * eye, z.copy(), eye.copy(), z.copy(), 10 * eye, z.copy())
        x = np.stack([eye[[0]], eye[[0]], eye[[1]], eye[[1]]])
        y = np.array([0, 0, 1, 1])
        batch = Batch(x, y, None, mvnet.mine_triplets(y, 0))
        value, grads = loss_and_grad(params, batch, LossConfig(margin=0.5))
        assert value.total == 0.0
        assert all(not g.any() for g in grads.arrays())

    def test_deterministic_given_mask(self, rng):
        params, batch = gradcheck.random_point(rng, LossConfig())
        g1 = mvnet.backward(params, batch)
        g2 = mvnet.backward(params, batch)
        assert g1.equal(g2)


class TestOptim:
    def _grads(self, scale):
        p = init_model(1, 2, seed=0, input_dim=3, hidden=(2, 2))
        g = p.zeros_like()
        g.W1[0, 0] = scale
        return g

    def test_clip_unchanged(self):
        g = self._grads(0.5)
        assert clip_gradients(g, 1.0) is g

    def test_clip_scales(self, rng):
        p = init_model(1, 2, seed=0, input_dim=3, hidden=(4, 4))
        g = ModelParams(*(rng.normal(size=a.shape) for a in p.arrays()))
        g = ModelParams(*(a * (4.0 / global_norm(g)) for a in g.arrays()))
        c = clip_gradients(g, 1.0)
        assert global_norm(c) == pytest.approx(1.0, abs=1e-12)
        for a, b in zip(g.arrays(), c.arrays()):
            np.testing.assert_allclose(b, a / 4.0, rtol=1e-12)

    def test_adam_zero_grad(self):
        p = init_model(1, 2, seed=3, input_dim=3, hidden=(2, 2))
        before = p.copy()
        state = AdamState.zeros(p)
        adam_step(p, state, p.zeros_like(), 1e-3)
        assert p.equal(before)

    @pytest.mark.parametrize("g", [1e-6, 0.3, -5.0, 1e4])
    def test_adam_first_step(self, g):
        p = init_model(1, 2, seed=3, input_dim=3, hidden=(2, 2))
        before = p.W1[0, 0]
        state = AdamState.zeros(p)
        adam_step(p, state, self._grads(g), 1e-3)
        # first bias-corrected step is -lr * g / (|g| + eps)
        assert p.W1[0, 0] - before == pytest.approx(-1e-3 * g / (abs(g) + 1e-8), rel=1e-9)
        assert abs(p.W1[0, 0] - before) == pytest.approx(1e-3, rel=1e-2)

    def test_plateau(self):
        s = PlateauScheduler(1e-3, 0.5, 5, 1e-5)
        lrs = [s.step(0.9) for _ in range(60)]
        assert lrs[3] == 1e-3 and lrs[5] == 5e-4
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        assert min(lrs) >= 1e-5 and lrs[-1] == 1e-5


@pytest.fixture(scope="module")
def small_data():
    m = ds.make_manifest(3, 2, samples_per_class=20, seed=5)
    recs = ds.generate_dataset(m)
    tr, va, te = ds.split_dataset(recs, seed=5)
    return m, [ds.to_arrays(p) for p in (tr, va, te)]


class TestTrain:
    def test_history_and_schedule(self, small_data):
        m, (tr, va, te) = small_data
        res = mvnet.train(tr, va, TrainConfig(seed=1), n=3, num_classes=m.num_classes)
        assert len(res.history) == 50
        lrs = [h["lr"] for h in res.history]
        assert lrs[0] == 1e-3
        assert all(b <= a for a, b in zip(lrs, lrs[1:])) and min(lrs) >= 1e-5
        best = max(h["val_acc"] for h in res.history)
        assert res.history[res.best_epoch - 1]["val_acc"] == best
        met = mvnet.evaluate(res.params, *va)
        assert met.accuracy == best

    def test_bit_identical(self, small_data):
        m, (tr, va, _) = small_data
        cfg = TrainConfig(epochs=3, seed=2)
        a = mvnet.train(tr, va, cfg, n=3, num_classes=m.num_classes)
        b = mvnet.train(tr, va, cfg, n=3, num_classes=m.num_classes)
        assert a.history == b.history and a.params.equal(b.params)

    def test_float32(self, small_data):
        m, (tr, va, _) = small_data
        res = mvnet.train(tr, va, TrainConfig(epochs=2, float32=True), n=3, num_classes=m.num_classes)
        assert res.params.dtype == np.float32

    def test_divergence(self, small_data):
        m, (tr, va, _) = small_data
        bad = tr[0].copy()
        bad[0, 0, 0] = np.nan
        with pytest.raises(mvnet.TrainingDiverged, match="epoch 1, batch"):
            mvnet.train((bad, tr[1]), va, TrainConfig(epochs=1), n=3, num_classes=m.num_classes)

    def test_history_table(self, small_data):
        m, (tr, va, _) = small_data
        res = mvnet.train(tr, va, TrainConfig(epochs=2), n=3, num_classes=m.num_classes)
        lines = res.history_table().splitlines()
        assert lines[0] == "epoch\ttrain_loss\tce\tcont\tlr\tval_acc"
        assert len(lines) == 3 and lines[1].startswith("1\t")


class TestEvaluate:
    def test_perfect_predictor(self):
        eye = np.eye(3)
        z = np.zeros(3)
        params = ModelParams(eye.copy(), z.copy(), eye.copy(), z.copy(), eye.copy(), z.copy())
        x = np.stack([eye[[c]] for c in (0, 1, 2, 2)])
        m = mvnet.evaluate(params, x, np.array([0, 1, 2, 2]), ["a", "b", "c"])
        assert m.accuracy == 1.0
        assert set(m.per_class_precision.values()) == {1.0}
        assert m.confusion.sum(axis=1).tolist() == [1, 1, 2]

    def test_ties_and_undefined_precision(self):
        params = init_model(1, 3, seed=0, input_dim=4, hidden=(2, 2)).zeros_like()
        m = mvnet.evaluate(params, np.ones((4, 1, 4)), np.array([0, 1, 2, 2]))
        assert (m.predictions == 0).all()
        prec = m.per_class_precision
        assert prec["0"] == 0.25 and prec["1"] is None and prec["2"] is None
        assert m.mean_precision == 0.25
        assert m.accuracy == np.trace(m.confusion) / m.total


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = init_model(3, 4, seed=8)
        p.b2[:] = np.linspace(-1, 1, 128)
        path = tmp_path / "c.bin"
        mvnet.save_checkpoint(path, p, "abc123", 3, meta={"k": 2})
        q = mvnet.load_checkpoint(path, "abc123")
        assert q.equal(p)
        _, header = mvnet.read_checkpoint(path)
        assert (header["n"], header["C"], header["H1"], header["H2"]) == (3, 4, 256, 128)

    def test_float32_round_trip(self, tmp_path):
        p = init_model(2, 3, seed=8, dtype=np.float32)
        mvnet.save_checkpoint(tmp_path / "c.bin", p, "h", 2)
        assert mvnet.load_checkpoint(tmp_path / "c.bin").equal(p)

    def test_tampered(self, tmp_path):
        path = tmp_path / "c.bin"
        mvnet.save_checkpoint(path, init_model(2, 3, seed=1), "h", 2)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(mvnet.CheckpointError, match="checksum"):
            mvnet.load_checkpoint(path)

    def test_class_table_mismatch(self, tmp_path):
        path = tmp_path / "c.bin"
        mvnet.save_checkpoint(path, init_model(2, 3, seed=1), "hash-a", 2)
        with pytest.raises(mvnet.ClassTableMismatch):
            mvnet.load_checkpoint(path, "hash-b")

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "c.bin"
        path.write_bytes(b"hello")
        with pytest.raises(mvnet.CheckpointError):
            mvnet.load_checkpoint(path)
