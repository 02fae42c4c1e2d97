"""Networks, datasets, gradients, and calibrated row noise."""

import math
import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from swapprune.nets import (
    Dataset,
    NoiseCalibrationError,
    NoiseSpec,
    Split,
    TinyMlp,
    TrainingDivergedError,
    evaluate,
    flatten_layers,
    forward_logits,
    forward_loss,
    init_mlp,
    inject_noise,
    load_csv_split,
    load_idx_images,
    load_idx_labels,
    loss_gradient,
    num_params,
    per_sample_gradients,
    save_csv_split,
    synth_dataset,
    train,
)


def kink_margin(mlp, x):
    """Smallest |pre-activation| over hidden layers for one sample.

    Central differences are invalid when a relu input sits within the
    step size of zero, so FD checks skip such draws.
    """
    acts = np.asarray(x, dtype=float)
    margin = np.inf
    layers = mlp.layers()
    for w, b in layers[:-1]:
        z = acts @ w + b
        margin = min(margin, float(np.min(np.abs(z))))
        acts = np.maximum(z, 0.0) if mlp.activation == "relu" else np.tanh(z)
    return margin


def reference_logits(mlp, x):
    """Scalar-by-scalar forward pass, independent of the array code."""
    acts = list(x)
    layers = mlp.layers()
    for li, (w, b) in enumerate(layers):
        nxt = []
        for j in range(w.shape[1]):
            z = b[j]
            for i in range(w.shape[0]):
                z += acts[i] * w[i, j]
            if li < len(layers) - 1:
                z = max(z, 0.0) if mlp.activation == "relu" else math.tanh(z)
            nxt.append(z)
        acts = nxt
    return np.array(acts)


class TestTinyMlp:
    def test_param_count(self):
        assert num_params((3, 5, 2)) == 3 * 5 + 5 + 5 * 2 + 2

    def test_flatten_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        mlp = init_mlp((4, 7, 3), seed=5)
        noisy = mlp.with_weights(mlp.flat_weights + rng.standard_normal(mlp.flat_weights.size))
        rebuilt = flatten_layers(noisy.layers())
        assert_array_equal(rebuilt, noisy.flat_weights)

    def test_layout_is_weights_then_bias_per_layer(self):
        flat = np.arange(3 * 2 + 2 + 2 * 1 + 1, dtype=float)
        mlp = TinyMlp((3, 2, 1), flat)
        (w0, b0), (w1, b1) = mlp.layers()
        assert_array_equal(w0, [[0, 1], [2, 3], [4, 5]])
        assert_array_equal(b0, [6, 7])
        assert_array_equal(w1, [[8], [9]])
        assert_array_equal(b1, [10])

    def test_wrong_flat_length_rejected(self):
        with pytest.raises(ValueError, match="flat_weights"):
            TinyMlp((3, 2), np.zeros(5))

    def test_bad_activation_rejected(self):
        with pytest.raises(ValueError, match="activation"):
            TinyMlp((2, 2), np.zeros(6), activation="gelu")

    def test_init_deterministic(self):
        a = init_mlp((6, 4, 3), seed=9)
        b = init_mlp((6, 4, 3), seed=9)
        assert_array_equal(a.flat_weights, b.flat_weights)


class TestForward:
    def test_all_zero_weights_uniform_loss(self):
        mlp = TinyMlp((3, 10), np.zeros(num_params((3, 10))))
        X = np.random.default_rng(1).standard_normal((8, 3))
        labels = np.arange(8) % 10
        assert_allclose(forward_loss(mlp, X, labels), np.log(10.0), rtol=1e-15)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(2)
        for act in ("relu", "tanh"):
            mlp = init_mlp((5, 6, 4), activation=act, seed=3)
            X = rng.standard_normal((3, 5))
            logits = forward_logits(mlp, X)
            for i in range(3):
                assert_allclose(logits[i], reference_logits(mlp, X[i]), atol=1e-12)

    def test_extreme_logits_stay_finite(self):
        mlp = TinyMlp((1, 2), np.array([500.0, -500.0, 0.0, 0.0]))
        loss = forward_loss(mlp, np.array([[1.0]]), np.array([1]))
        assert np.isfinite(loss)

    def test_feature_dim_checked(self):
        mlp = init_mlp((4, 2), seed=0)
        with pytest.raises(ValueError, match="shape"):
            forward_loss(mlp, np.zeros((2, 3)), np.zeros(2, dtype=int))

    def test_label_range_checked(self):
        mlp = init_mlp((2, 3), seed=0)
        with pytest.raises(ValueError, match="labels"):
            forward_loss(mlp, np.zeros((1, 2)), np.array([3]))

    def test_zeroed_weight_equals_dropped_connection(self):
        """Zero in the flat vector == the term missing from the sum."""
        rng = np.random.default_rng(4)
        for _ in range(20):
            mlp = init_mlp((4, 5, 3), activation="tanh", seed=int(rng.integers(100)))
            j = int(rng.integers(mlp.flat_weights.size))
            flat = mlp.flat_weights.copy()
            flat[j] = 0.0
            pruned = mlp.with_weights(flat)
            x = rng.standard_normal(4)
            # The reference loop skips zero products by arithmetic identity.
            assert_allclose(forward_logits(pruned, x[None, :])[0],
                            reference_logits(pruned, x), atol=1e-12)

    def test_zeroed_hidden_unit_equals_smaller_net(self):
        rng = np.random.default_rng(5)
        mlp = init_mlp((6, 8, 4), seed=11)
        (w0, b0), (w1, b1) = mlp.layers()
        unit = 3
        w0z, b0z, w1z = w0.copy(), b0.copy(), w1.copy()
        w0z[:, unit] = 0.0
        b0z[unit] = 0.0
        w1z[unit, :] = 0.0
        zeroed = TinyMlp((6, 8, 4), flatten_layers([(w0z, b0z), (w1z, b1)]))
        smaller = TinyMlp(
            (6, 7, 4),
            flatten_layers([
                (np.delete(w0, unit, axis=1), np.delete(b0, unit)),
                (np.delete(w1, unit, axis=0), b1),
            ]),
        )
        X = rng.standard_normal((10, 6))
        assert_allclose(forward_logits(zeroed, X), forward_logits(smaller, X),
                        atol=1e-12)


class TestGradients:
    def test_duplicated_sample_identical_rows(self):
        mlp = init_mlp((3, 4, 2), seed=6)
        x = np.random.default_rng(7).standard_normal(3)
        G = per_sample_gradients(mlp, np.stack([x, x]), np.array([1, 1]))
        assert_array_equal(G[0], G[1])

    def test_rows_match_finite_differences(self):
        """Each row against the FD oracle of its own sample's loss."""
        rng = np.random.default_rng(8)
        checked = 0
        while checked < 100:
            dims = (3, 5, 4) if checked % 2 else (4, 3, 3, 2)
            act = "tanh" if checked % 3 else "relu"
            mlp = init_mlp(dims, activation=act, seed=int(rng.integers(1000)))
            X = rng.standard_normal((2, dims[0]))
            labels = rng.integers(0, dims[-1], size=2)
            i = int(rng.integers(2))
            if act == "relu" and kink_margin(mlp, X[i]) < 1e-3:
                continue
            G = per_sample_gradients(mlp, X, labels)
            w0 = mlp.flat_weights
            oracle = np.zeros_like(w0)
            h = 1e-6
            for j in range(w0.size):
                e = np.zeros_like(w0)
                e[j] = h
                up = forward_loss(mlp.with_weights(w0 + e), X[i : i + 1], labels[i : i + 1])
                dn = forward_loss(mlp.with_weights(w0 - e), X[i : i + 1], labels[i : i + 1])
                oracle[j] = (up - dn) / (2 * h)
            denom = max(np.linalg.norm(oracle), 1e-12)
            assert np.linalg.norm(G[i] - oracle) / denom <= 1e-5
            checked += 1

    def test_row_mean_is_batch_gradient(self):
        rng = np.random.default_rng(9)
        mlp = init_mlp((5, 6, 3), seed=10)
        X = rng.standard_normal((7, 5))
        labels = rng.integers(0, 3, size=7)
        G = per_sample_gradients(mlp, X, labels)
        assert_allclose(G.mean(axis=0), loss_gradient(mlp, X, labels), atol=1e-10)


class TestTrain:
    def test_zero_epochs_unchanged(self):
        data = synth_dataset(seed=1, n=40, dim=4, classes=2, blob_spread=0.2)
        mlp = init_mlp((4, 2), seed=0)
        out = train(mlp, data.train, epochs=0, lr=0.1)
        assert_array_equal(out.flat_weights, mlp.flat_weights)

    def test_same_seed_bit_identical(self):
        data = synth_dataset(seed=2, n=60, dim=5, classes=3, blob_spread=0.3)
        mlp = init_mlp((5, 6, 3), seed=4)
        a = train(mlp, data.train, epochs=3, lr=0.1, seed=12)
        b = train(mlp, data.train, epochs=3, lr=0.1, seed=12)
        assert_array_equal(a.flat_weights, b.flat_weights)

    def test_loss_mostly_decreasing(self):
        # Same seed means run k is a prefix of run k+1, so consecutive
        # full-train losses track one trajectory.
        data = synth_dataset(seed=3, n=100, dim=6, classes=3, blob_spread=0.2)
        mlp = init_mlp((6, 8, 3), seed=5)
        losses = [
            forward_loss(train(mlp, data.train, epochs=k, lr=0.2, seed=6),
                         data.train.features, data.train.labels)
            for k in range(12)
        ]
        for prev, nxt in zip(losses, losses[1:]):
            assert nxt <= prev * 1.05

    def test_divergence_reports_epoch(self):
        # Moderately huge rates only saturate the relu units; the step has
        # to overflow float64 products before the loss goes non-finite.
        data = synth_dataset(seed=4, n=40, dim=4, classes=2, blob_spread=0.2)
        mlp = init_mlp((4, 4, 2), seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError, match="epoch 1"):
                train(mlp, data.train, epochs=5, lr=1e300)

    def test_blob_task_reaches_frozen_accuracy(self):
        """Seeded 500-sample blob task exceeds 95% test accuracy."""
        data = synth_dataset(seed=7, n=500, dim=20, classes=5, blob_spread=0.3)
        mlp = init_mlp((20, 32, 5), seed=2)
        trained = train(mlp, data.train, epochs=200, lr=0.2, seed=2)
        assert evaluate(trained, data.test).accuracy > 0.95


class TestEvaluate:
    def test_zero_net_predicts_class_zero(self):
        mlp = TinyMlp((2, 4), np.zeros(num_params((2, 4))))
        feats = np.random.default_rng(11).standard_normal((8, 2))
        labels = np.array([0, 1, 2, 3] * 2)
        res = evaluate(mlp, Split(feats, labels))
        assert res.accuracy == 0.25  # exactly the share of label 0
        assert res.top5 is None

    def test_zero_net_top5_is_first_five_classes(self):
        mlp = TinyMlp((3, 10), np.zeros(num_params((3, 10))))
        feats = np.random.default_rng(12).standard_normal((20, 3))
        labels = np.arange(20) % 10
        res = evaluate(mlp, Split(feats, labels))
        assert res.top5 == 0.5
        assert_allclose(res.loss, np.log(10.0), rtol=1e-15)

    def test_empty_split_rejected(self):
        mlp = init_mlp((2, 2), seed=0)
        with pytest.raises(ValueError):
            evaluate(mlp, Split(np.zeros((0, 2)), np.zeros(0, dtype=int)))


class TestSynthDataset:
    def test_deterministic(self):
        a = synth_dataset(seed=13, n=50, dim=3, classes=2, blob_spread=0.5)
        b = synth_dataset(seed=13, n=50, dim=3, classes=2, blob_spread=0.5)
        assert_array_equal(a.train.features, b.train.features)
        assert_array_equal(a.test.labels, b.test.labels)

    def test_split_sizes(self):
        data = synth_dataset(seed=14, n=100, dim=2, classes=4, blob_spread=0.1)
        assert len(data.train) == 80
        assert len(data.test) == 20
        assert data.num_classes == 4

    def test_tiny_spread_linearly_separable(self):
        data = synth_dataset(seed=15, n=100, dim=5, classes=3, blob_spread=1e-3)
        mlp = init_mlp((5, 3), seed=0)  # no hidden layer: a linear model
        trained = train(mlp, data.train, epochs=50, lr=0.5, seed=0)
        assert evaluate(trained, data.test).accuracy == 1.0

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="classes"):
            synth_dataset(seed=0, n=2, dim=2, classes=3, blob_spread=0.1)


class TestIdxFiles:
    def test_image_round_trip(self, tmp_path):
        rng = np.random.default_rng(16)
        pixels = rng.integers(0, 256, size=(4, 2, 3), dtype=np.uint8)
        path = tmp_path / "imgs.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000803, 4, 2, 3) + pixels.tobytes())
        loaded = load_idx_images(path)
        assert loaded.shape == (4, 6)
        assert_allclose(loaded, pixels.reshape(4, 6) / 255.0)

    def test_label_round_trip(self, tmp_path):
        labels = np.array([0, 1, 2, 9], dtype=np.uint8)
        path = tmp_path / "labels.idx"
        path.write_bytes(struct.pack(">II", 0x00000801, 4) + labels.tobytes())
        assert_array_equal(load_idx_labels(path), [0, 1, 2, 9])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 1, 1) + b"\x00")
        with pytest.raises(ValueError, match="magic"):
            load_idx_images(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2) + b"\x00" * 5)
        with pytest.raises(ValueError, match="expected 8 pixels"):
            load_idx_images(path)


class TestCsvSplit:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        split = Split(rng.standard_normal((6, 3)), rng.integers(0, 2, size=6))
        path = tmp_path / "data.csv"
        save_csv_split(path, split)
        loaded = load_csv_split(path)
        assert_array_equal(loaded.features, split.features)
        assert_array_equal(loaded.labels, split.labels)

    def test_missing_label_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="label"):
            load_csv_split(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("f0,label\n1.0,0\n2.0\n")
        with pytest.raises(ValueError, match="columns"):
            load_csv_split(path)


class TestNoise:
    def test_zero_fraction_returns_copy(self):
        G = np.random.default_rng(18).standard_normal((10, 4))
        out = inject_noise(G, NoiseSpec(fraction=0.0, level=1.0))
        assert_array_equal(out, G)
        assert out is not G

    def test_calibration_hits_target(self):
        """Achieved std within 1% of (1 + m) * sigma across the grid."""
        rng = np.random.default_rng(19)
        G = rng.standard_normal((60, 8))
        sigma = G.std()
        for fraction in (0.1, 0.25, 1.0):
            for level in (1.0, 2.0):
                out = inject_noise(G, NoiseSpec(fraction=fraction, level=level))
                target = (1 + level) * sigma
                assert abs(out.std() - target) <= 0.01 * target

    def test_doubling_example(self):
        G = np.random.default_rng(20).standard_normal((30, 5))
        out = inject_noise(G, NoiseSpec(fraction=1.0, level=1.0))
        sigma = G.std()
        assert 1.98 * sigma <= out.std() <= 2.02 * sigma

    def test_untouched_rows_identical(self):
        G = np.random.default_rng(21).standard_normal((20, 3))
        out = inject_noise(G, NoiseSpec(fraction=0.25, level=2.0, cal_seed=3))
        changed = np.any(out != G, axis=1)
        assert changed.sum() == 5  # floor(0.25 * 20)
        assert_array_equal(out[~changed], G[~changed])

    def test_deterministic_and_seed_sensitive(self):
        G = np.random.default_rng(22).standard_normal((16, 4))
        a = inject_noise(G, NoiseSpec(fraction=0.5, level=1.0, cal_seed=7))
        b = inject_noise(G, NoiseSpec(fraction=0.5, level=1.0, cal_seed=7))
        c = inject_noise(G, NoiseSpec(fraction=0.5, level=1.0, cal_seed=8))
        assert_array_equal(a, b)
        assert np.any(a != c)

    def test_constant_matrix_rejected(self):
        with pytest.raises(NoiseCalibrationError, match="achievable"):
            inject_noise(np.ones((4, 4)), NoiseSpec(fraction=1.0, level=1.0))

    def test_fraction_below_one_row_rejected(self):
        G = np.random.default_rng(23).standard_normal((10, 2))
        with pytest.raises(NoiseCalibrationError, match="0 of 10 rows"):
            inject_noise(G, NoiseSpec(fraction=0.05, level=1.0))

    def test_invalid_spec_fields(self):
        with pytest.raises(ValueError, match="fraction"):
            NoiseSpec(fraction=1.5, level=1.0)
        with pytest.raises(ValueError, match="level"):
            NoiseSpec(fraction=0.5, level=0.0)
