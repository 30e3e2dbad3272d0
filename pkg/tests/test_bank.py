import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hoigraph import bank as pb
from hoigraph.amplifier import AttentionWeights
from hoigraph.errors import (
    BankNotInitializedError,
    ConfigurationError,
    FormatError,
    MagicMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)

import oracles


def make_layer(k=3, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return pb.LayerBank(rng.normal(size=(k, d)), rng.normal(size=(k, d)), rng.normal(size=(k, d)),
                        AttentionWeights.seeded(d, seed))


def make_batch(b=2, k=3, d=4, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    labels = np.arange(b) % 2 if labels is None else np.asarray(labels)
    return pb.BatchCentroids(
        rng.normal(size=(b, k, d)), rng.normal(size=(b, k, d)), rng.normal(size=(b, k, d)),
        rng.uniform(0.1, 2, size=(b, k)), rng.uniform(0.1, 2, size=(b, k)), labels,
    )


class TestGate:
    def test_aligned_batch_passes(self):
        layer = make_layer()
        X = np.broadcast_to(layer.glob.mean(axis=0), (2, 5, 4))
        passed, s = pb.gate(X, layer, 1.0)
        assert s == pytest.approx(1.0) and passed

    def test_orthogonal_fails(self):
        layer = pb.LayerBank(*([np.array([[1.0, 0.0], [1.0, 0.0]])] * 3))
        passed, s = pb.gate(np.tile([0.0, 3.0], (1, 4, 1)), layer, 0.1)
        assert s == 0.0 and not passed

    def test_anti_aligned_fails_at_zero(self):
        layer = pb.LayerBank(*([np.array([[1.0, 1.0]])] * 3))
        passed, s = pb.gate(-np.ones((2, 3, 2)), layer, 0.0)
        assert s == pytest.approx(-1.0) and not passed

    def test_equality_passes(self):
        layer = pb.LayerBank(*([np.array([[1.0, 0.0]])] * 3))
        assert pb.gate(np.ones((1, 1, 2)) * [1.0, 0.0], layer, 1.0)[0]

    def test_zero_mean_gives_zero(self):
        layer = make_layer()
        X = np.stack([np.ones((2, 4)), -np.ones((2, 4))])
        assert pb.gate(X, layer, -1.0) == (True, 0.0)

    def test_uninitialized(self):
        with pytest.raises(BankNotInitializedError):
            pb.gate(np.ones((1, 1, 2)), pb.LayerBank(), 0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(0, 10**6))
    def test_scale_invariant(self, scale, seed):
        layer = make_layer(seed=seed)
        X = np.random.default_rng(seed).normal(size=(3, 5, 4))
        assert pb.gate(X * scale, layer, 0.0)[1] == pytest.approx(pb.gate(X, layer, 0.0)[1], abs=1e-9)


class TestSelect:
    def test_eval_no_noise_is_exact(self):
        layer = make_layer()
        C = pb.select_init_centroids(layer, 3, pb.Eval(), seed=1, perturb_sigma=0.0)
        assert C.astype(np.float32).tobytes() == layer.glob.tobytes()

    def test_eval_noise_is_seeded(self):
        layer = make_layer()
        a = pb.select_init_centroids(layer, 3, pb.Eval(), seed=1)
        b = pb.select_init_centroids(layer, 3, pb.Eval(), seed=1)
        assert np.array_equal(a, b)
        assert 0 < np.abs(a - layer.glob).max() < 0.01

    def test_balanced_train(self):
        layer = make_layer(k=10)
        C = pb.select_init_centroids(layer, 10, pb.Train(1, 1), seed=3, perturb_sigma=0.0)
        assert pb.slot_counts(10, 1, 1) == (2, 4, 4)
        np.testing.assert_array_equal(C[:2], layer.glob[:2])
        for row in C[2:6]:
            assert any(np.array_equal(row, p) for p in layer.positive)
        for row in C[6:]:
            assert any(np.array_equal(row, p) for p in layer.negative)

    def test_imbalanced_counts(self):
        assert pb.slot_counts(10, 9, 87) == (2, 1, 7)
        layer = make_layer(k=10)
        C = pb.select_init_centroids(layer, 10, pb.Train(9, 87), seed=5, perturb_sigma=0.0)
        assert any(np.array_equal(C[2], p) for p in layer.positive)
        assert all(any(np.array_equal(r, p) for p in layer.negative) for r in C[3:])

    @pytest.mark.parametrize("k,pos,neg,expected", [
        (1, 1, 1, (1, 0, 0)),
        (5, 3, 1, (1, 3, 1)),
        (21, 0, 5, (5, 0, 16)),
        (21, 5, 0, (5, 16, 0)),
        (7, 1, 1, (2, 3, 2)),  # 2.5 rounds up for the tied minority
    ])
    def test_slot_count_table(self, k, pos, neg, expected):
        assert pb.slot_counts(k, pos, neg) == expected

    def test_errors(self):
        with pytest.raises(BankNotInitializedError):
            pb.select_init_centroids(pb.LayerBank(), 3)
        with pytest.raises(ConfigurationError):
            pb.select_init_centroids(make_layer(), 3, pb.Train(0, 0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 50), st.integers(0, 50), st.integers(0, 10**6))
    def test_rows_come_from_bank(self, k, pos, neg, seed):
        if pos + neg == 0:
            pos = 1
        layer = make_layer(k=k, d=3, seed=seed)
        C = pb.select_init_centroids(layer, k, pb.Train(pos, neg), seed=seed, perturb_sigma=0.0)
        assert C.shape == (k, 3)
        rows = np.concatenate([layer.glob, layer.positive, layer.negative])
        for r in C:
            assert (rows == r).all(axis=1).any()
        assert sum(pb.slot_counts(k, pos, neg)) == k


class TestLabelAware:
    def test_hand_arithmetic(self):
        c_pos, c_neg, a_pos, a_neg = pb.label_aware_centroids([[0.0], [2.0]], [[0.5], [0.5]], 1)
        assert c_pos[0, 0] == pytest.approx(1.0, abs=1e-7)
        assert a_pos[0] == 0.5 and a_neg[0] == 0.0
        assert c_neg[0, 0] == 0.0

    def test_positive_matches_fcm_update(self):
        from hoigraph import fcm
        rng = np.random.default_rng(0)
        X = rng.normal(size=(6, 3))
        U = fcm.random_membership(6, 2, 0)
        c_pos, c_neg, _, _ = pb.label_aware_centroids(X, U, 1)
        np.testing.assert_allclose(c_pos, fcm.update_centroids(X, U, 2.0), atol=1e-6)
        np.testing.assert_allclose(c_neg, 0.0)

    def test_negative_symmetric(self):
        rng = np.random.default_rng(1)
        X, U = rng.normal(size=(5, 2)), rng.dirichlet([1, 1], size=5)
        p1, n1, ap1, an1 = pb.label_aware_centroids(X, U, 1)
        p0, n0, ap0, an0 = pb.label_aware_centroids(X, U, 0)
        np.testing.assert_array_equal(p1, n0)
        np.testing.assert_array_equal(ap1, an0)

    def test_bad_label(self):
        with pytest.raises(ConfigurationError):
            pb.label_aware_centroids([[0.0]], [[1.0]], 2)


class TestGreedy:
    def test_adversarial_matrix(self):
        S = [[0.9, 0.8, 0.1], [0.8, 0.1, 0.1], [0.1, 0.1, 0.1]]
        assert pb.greedy_match(S).tolist() == [0, 1, 2]

    def test_not_optimal(self):
        # optimal total would pair (0,1),(1,0): 1.6 > 1.0
        S = np.array([[0.9, 0.8], [0.8, 0.1]])
        assert pb.greedy_match(S).tolist() == [0, 1]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 10**6))
    def test_bijection(self, k, seed):
        rng = np.random.default_rng(seed)
        S = rng.integers(-2, 3, size=(k, k)).astype(float)  # many ties
        assert sorted(pb.greedy_match(S).tolist()) == list(range(k))


class TestSoftAlign:
    def test_planted_permutation(self):
        layer = make_layer(k=5, d=6, seed=2)
        sigma = np.array([3, 0, 4, 1, 2])
        g = layer.glob.astype(np.float64)[sigma]
        batch = pb.BatchCentroids(g[None], g[None], g[None], np.ones((1, 5)), np.ones((1, 5)), np.array([1]))
        out = pb.soft_align(batch, layer)
        np.testing.assert_allclose(out.glob, layer.glob, atol=1e-6)
        assert np.array_equal(sigma[out.permutation], np.arange(5))

    def test_same_permutation_for_classes(self):
        layer = make_layer(seed=3)
        batch = make_batch(b=1, seed=3)
        out = pb.soft_align(batch, layer)
        pos, neg = batch.class_means()
        np.testing.assert_allclose(out.positive, pos[out.permutation])
        np.testing.assert_allclose(out.negative, neg[out.permutation])
        np.testing.assert_allclose(out.glob, batch.centroids[0][out.permutation])

    def test_class_means_weighted(self):
        batch = pb.BatchCentroids(
            np.zeros((2, 1, 1)), np.array([[[1.0]], [[4.0]]]), np.zeros((2, 1, 1)),
            np.array([[1.0], [3.0]]), np.zeros((2, 1)), np.array([1, 1]))
        pos, neg = batch.class_means()
        assert pos[0, 0] == pytest.approx(13 / 4)
        assert neg[0, 0] == 0.0


class TestSlotAlign:
    def test_single_slot(self):
        v = np.array([[1.0, 2.0]])
        layer = pb.LayerBank(v, v, v)
        batch = pb.BatchCentroids(v[None], v[None], v[None], np.ones((1, 1)), np.ones((1, 1)), np.array([1]))
        out = pb.slot_align(batch, layer)
        np.testing.assert_allclose(out.glob, v)

    def test_identical_centroids(self):
        v = np.array([0.5, -1.0, 2.0])
        layer = make_layer(k=4, d=3, seed=4)
        C = np.broadcast_to(v, (3, 4, 3)).copy()
        out = pb.slot_align(pb.BatchCentroids(C, C, C, np.ones((3, 4)), np.ones((3, 4)), np.array([0, 1, 1])), layer)
        for arr in (out.glob, out.positive, out.negative):
            np.testing.assert_allclose(arr, np.broadcast_to(v, (4, 3)), atol=1e-7)

    def test_matches_naive_oracle(self):
        layer = make_layer(k=3, d=4, seed=7)
        batch = make_batch(b=2, k=3, d=4, seed=7)
        out = pb.slot_align(batch, layer)
        g, p, n = oracles.naive_slot_align(
            batch.centroids.tolist(), batch.positive.tolist(), batch.negative.tolist(),
            batch.alpha_pos.tolist(), batch.alpha_neg.tolist(), layer.glob.astype(float).tolist())
        np.testing.assert_allclose(out.glob, g, atol=1e-9)
        np.testing.assert_allclose(out.positive, p, atol=1e-9)
        np.testing.assert_allclose(out.negative, n, atol=1e-9)


class TestEma:
    def scalar(self):
        return pb.LayerBank([[2.0]], [[0.0]], [[1.0]]), pb.AlignedCentroids(
            np.array([[3.0]]), np.array([[4.0]]), np.array([[2.0]]))

    def test_hand_arithmetic(self):
        layer, aligned = self.scalar()
        out = pb.ema_update(layer, aligned, 0.5, 0.5)
        assert (out.positive[0, 0], out.negative[0, 0], out.glob[0, 0]) == (3.0, 1.0, 1.75)

    def test_mu_zero_unchanged(self):
        layer = make_layer()
        aligned = pb.soft_align(make_batch(), layer)
        out = pb.ema_update(layer, aligned, 0.0, 0.5)
        for a, b in ((out.positive, layer.positive), (out.negative, layer.negative), (out.glob, layer.glob)):
            assert a.tobytes() == b.tobytes()

    def test_mu_one_gamma_one(self):
        layer = make_layer()
        aligned = pb.soft_align(make_batch(), layer)
        out = pb.ema_update(layer, aligned, 1.0, 1.0)
        np.testing.assert_allclose(out.positive, aligned.positive, rtol=1e-6)
        np.testing.assert_allclose(out.glob, aligned.glob, rtol=1e-6)

    def test_zero_weight_slot_keeps_prototype(self):
        layer, aligned = self.scalar()
        aligned.weight_pos = np.array([0.0])
        out = pb.ema_update(layer, aligned, 0.5, 0.5)
        assert out.positive[0, 0] == 2.0

    @pytest.mark.parametrize("mu", [0.1, 0.5, 0.9])
    def test_contraction(self, mu):
        layer = make_layer(seed=9)
        aligned = pb.AlignedCentroids(*(np.random.default_rng(10).normal(size=(3, 3, 4))))
        err0 = np.abs(layer.positive - aligned.positive).max()
        for step in range(1, 8):
            layer = pb.ema_update(layer, aligned, mu, 0.5)
            err = np.abs(layer.positive.astype(float) - aligned.positive).max()
            assert err <= err0 * (1 - mu) ** step + 1e-5
        fixed = pb.ema_update(pb.LayerBank(aligned.positive, aligned.negative,
                                           0.5 * aligned.glob + 0.25 * (aligned.positive + aligned.negative)),
                              aligned, mu, 0.5)
        np.testing.assert_allclose(fixed.glob, 0.5 * aligned.glob + 0.25 * (aligned.positive + aligned.negative),
                                   atol=1e-6)


class TestSchedule:
    def test_phases(self):
        s = pb.ScheduleState()
        p0 = pb.schedule(s, 0)
        assert (p0.init_source, p0.alignment, p0.tau, p0.gating) == (
            pb.InitSource.KMEANS, pb.Alignment.SOFT, -math.inf, False)
        p5 = pb.schedule(s, 5)
        assert p5.init_source is pb.InitSource.PROTOTYPE and p5.tau == pytest.approx(0.1)
        assert pb.schedule(s, 19).alignment is pb.Alignment.SOFT
        assert pb.schedule(s, 20).alignment is pb.Alignment.SLOT
        assert pb.schedule(s, 100).tau == 0.0
        assert pb.schedule(s, 250).tau == 0.0
        assert pb.schedule(s, 52).tau == pytest.approx(0.1 * (1 - 47 / 95))

    def test_evaluation(self):
        p = pb.schedule(pb.ScheduleState(), 50, evaluation=True)
        assert p.prototypes_frozen and p.init_source is pb.InitSource.PROTOTYPE and not p.gating

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            pb.ScheduleState(warm_start_epoch=30, alignment_switch_epoch=20)
        with pytest.raises(ConfigurationError):
            pb.schedule(pb.ScheduleState(), -1)

    def test_deterministic(self):
        s = pb.ScheduleState()
        assert all(pb.schedule(s, e) == pb.schedule(s, e) for e in range(0, 120, 7))


class TestBootstrap:
    def test_single_sample(self):
        C = np.random.default_rng(0).normal(size=(1, 3, 2))
        out = pb.bootstrap(pb.LayerBank(), C)
        for arr in (out.positive, out.negative, out.glob):
            np.testing.assert_allclose(arr, C[0], rtol=1e-6)

    def test_cancelling(self):
        v = np.random.default_rng(1).normal(size=(3, 2))
        out = pb.bootstrap(pb.LayerBank(), np.stack([v, -v]))
        assert np.all(out.glob == 0)

    def test_mean_oracle(self):
        C = np.random.default_rng(2).normal(size=(4, 3, 5))
        out = pb.bootstrap(pb.LayerBank(), C)
        ref = [[sum(C[b, k, d] for b in range(4)) / 4 for d in range(5)] for k in range(3)]
        np.testing.assert_allclose(out.glob, ref, rtol=1e-6)

    def test_twice(self):
        with pytest.raises(ConfigurationError):
            pb.bootstrap(make_layer(), np.zeros((3, 4)))


class TestPersistence:
    def bank(self):
        return pb.PrototypeBank({0: make_layer(seed=0), 1: make_layer(seed=1)}, 0.9, 0.5,
                                pb.ScheduleState(current_epoch=7))

    def test_round_trip(self, tmp_path):
        bank = self.bank()
        path = tmp_path / "bank.bin"
        pb.save(bank, path)
        assert path.stat().st_size == pb.bank_file_size(3, 4, 2)
        back = pb.load(path)
        for i in (0, 1):
            for name in ("positive", "negative", "glob"):
                assert getattr(back.layers[i], name).tobytes() == getattr(bank.layers[i], name).tobytes()
            assert back.layers[i].attention.w.tobytes() == bank.layers[i].attention.w.tobytes()
        assert (back.mu, back.gamma, back.schedule) == (0.9, 0.5, bank.schedule)
        assert pb.to_bytes(back) == pb.to_bytes(bank)

    def test_header_layout(self):
        data = pb.to_bytes(self.bank())
        assert data[:4] == b"HPPB"
        assert np.frombuffer(data[4:20], "<u4").tolist() == [1, 3, 4, 2]

    def test_bad_magic(self):
        data = bytearray(pb.to_bytes(self.bank()))
        data[:4] = b"XXXX"
        with pytest.raises(MagicMismatchError):
            pb.from_bytes(bytes(data))

    def test_bad_version(self):
        data = bytearray(pb.to_bytes(self.bank()))
        data[4] = 9
        with pytest.raises(VersionMismatchError):
            pb.from_bytes(bytes(data))

    def test_truncated(self):
        data = pb.to_bytes(self.bank())
        with pytest.raises(TruncatedFileError) as err:
            pb.from_bytes(data[:50])
        assert str(len(data)) in str(err.value)
        with pytest.raises(TruncatedFileError):
            pb.from_bytes(data[:10])

    def test_trailing(self):
        with pytest.raises(FormatError):
            pb.from_bytes(pb.to_bytes(self.bank()) + b"\0")

    def test_uninitialized_cannot_save(self):
        with pytest.raises(BankNotInitializedError):
            pb.to_bytes(pb.PrototypeBank({0: pb.LayerBank()}))

    def test_mixed_k_rejected(self):
        bank = pb.PrototypeBank({0: make_layer(k=3), 1: make_layer(k=4)})
        with pytest.raises(ConfigurationError):
            pb.to_bytes(bank)
