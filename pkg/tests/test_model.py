import numpy as np
import pytest

from gradcheck import numerical_grad, rel_error
from vegam.model import (
    ConfigError,
    ModelConfig,
    activation_gradients,
    build_model,
    dense_weight_maps,
    forward,
    load_checkpoint,
    models_equal,
    save_checkpoint,
)
from vegam.tensor import ShapeError, softmax_ce_loss

TINY = ModelConfig(input_side=8, channels=(2, 3, 3, 4, 4, 4), num_classes=3)


class TestConfig:
    def test_default_plan(self):
        cfg = ModelConfig()
        assert cfg.input_side == 224
        assert cfg.dropout == 0.2
        assert cfg.penultimate_side() == 14
        assert cfg.penultimate_side() >= 4

    def test_desk_preset(self):
        cfg = ModelConfig.desk()
        assert cfg.input_side == 64
        assert cfg.penultimate_side() == 4

    @pytest.mark.parametrize("kw", [
        dict(channels=(8, 8, 8)),
        dict(strides=(1, 1, 1, 1, 1, 0)),
        dict(dropout=1.0),
        dict(num_classes=1),
        dict(input_side=0),
    ])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**kw)

    @pytest.mark.parametrize("classes", [10, 12])
    def test_script_class_counts(self, classes):
        m = build_model(ModelConfig.desk(classes))
        assert m.dense.weight.shape == (classes, 32 * 4 * 4)


class TestBuild:
    def test_same_seed_bit_identical(self):
        a, b = build_model(TINY, seed=5), build_model(TINY, seed=5)
        assert models_equal(a, b)
        assert not models_equal(a, build_model(TINY, seed=6))

    def test_dense_init_symmetric_uniform(self):
        m = build_model(ModelConfig.desk(), seed=0)
        w = m.dense.weight.data
        bound = 1 / np.sqrt(w.shape[1])
        assert np.all(np.abs(w) <= bound)
        # uniform on [-b, b]: mean 0, variance b^2 / 3
        assert abs(w.mean()) < 0.05 * bound
        assert w.var() == pytest.approx(bound**2 / 3, rel=0.05)

    def test_block_order(self):
        kinds = [type(l).__name__ for l in build_model(TINY).layers]
        assert kinds == ["Conv2d", "BatchNorm2d", "ReLU", "Dropout"] * 6 + ["Flatten", "Dense"]


class TestForward:
    def test_zero_image_gives_bias(self):
        m = build_model(TINY, seed=1)
        m.dense.bias.data = np.array([0.3, -1.0, 2.0])
        tr = forward(m, np.zeros((8, 8)))
        np.testing.assert_array_equal(tr.logits[0], m.dense.bias.data)

    def test_softmax_normalised(self):
        m = build_model(TINY, seed=2)
        x = np.random.default_rng(0).uniform(size=(5, 8, 8))
        tr = forward(m, x)
        np.testing.assert_allclose(tr.confidence.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(tr.predicted, tr.logits.argmax(axis=1))
        assert tr.activations.shape == (5, 4, 1, 1)

    def test_wrong_size(self):
        with pytest.raises(ShapeError):
            forward(build_model(TINY), np.zeros((9, 9)))

    def test_eval_deterministic_train_seeded(self):
        m = build_model(TINY, seed=3)
        x = np.random.default_rng(1).uniform(size=(4, 8, 8))
        np.testing.assert_array_equal(forward(m, x).logits, forward(m, x).logits)
        a = forward(m, x, mode="train", dropout_seed=9).logits
        np.testing.assert_array_equal(a, forward(m, x, mode="train", dropout_seed=9).logits)

    def test_bias_shift(self):
        m = build_model(TINY, seed=4)
        x = np.random.default_rng(2).uniform(size=(3, 8, 8))
        before = forward(m, x).logits
        shift = np.array([1.0, -2.0, 0.5])
        m.dense.bias.data = m.dense.bias.data + shift
        np.testing.assert_allclose(forward(m, x).logits - before, np.broadcast_to(shift, before.shape), atol=1e-12)

    def test_argmax_invariant_to_constant(self):
        m = build_model(TINY, seed=4)
        x = np.random.default_rng(3).uniform(size=(6, 8, 8))
        before = forward(m, x).predicted
        m.dense.bias.data = m.dense.bias.data + 7.0
        np.testing.assert_array_equal(forward(m, x).predicted, before)


class TestDenseWeightMaps:
    def setup_method(self):
        self.cfg = ModelConfig(input_side=16, channels=(2, 3, 3, 4, 4, 5), num_classes=4)
        self.model = build_model(self.cfg, seed=11)
        self.x = np.random.default_rng(5).uniform(size=(1, 16, 16))

    def test_backprop_equals_weights_exactly(self):
        tr = forward(self.model, self.x)
        for c in range(4):
            g = activation_gradients(self.model, tr, [c])[0]
            np.testing.assert_array_equal(g, dense_weight_maps(self.model, c))

    def test_finite_difference(self):
        tr = forward(self.model, self.x)
        A = tr.activations[0].copy()
        dense = self.model.dense
        for c in range(4):
            num = numerical_grad(lambda: float((dense.weight.data @ A.ravel() + dense.bias.data)[c]), A)
            np.testing.assert_allclose(num, dense_weight_maps(self.model, c), atol=1e-6)

    def test_view_is_read_only(self):
        v = dense_weight_maps(self.model, 0)
        with pytest.raises(ValueError):
            v[0, 0, 0] = 1.0

    def test_sum_over_classes(self):
        total = sum(dense_weight_maps(self.model, c) for c in range(4))
        np.testing.assert_allclose(total.ravel(), self.model.dense.weight.data.sum(axis=0), atol=1e-15)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            dense_weight_maps(self.model, 4)

    def test_activation_gradients_leave_grads_alone(self):
        tr = forward(self.model, self.x)
        self.model.dense.weight.grad = np.ones(self.model.dense.weight.shape)
        activation_gradients(self.model, tr, [1])
        np.testing.assert_array_equal(self.model.dense.weight.grad, 1.0)


class TestFullBackward:
    def test_ce_gradients_through_whole_network(self):
        cfg = ModelConfig(input_side=8, channels=(2, 2, 2, 3, 3, 3), num_classes=3, dropout=0.2)
        m = build_model(cfg, seed=2, input_grad=True)
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(3, 8, 8))
        y = np.array([0, 2, 1])

        def loss():
            return softmax_ce_loss(forward(m, x, mode="train", dropout_seed=5).logits, y)[0]

        tr = forward(m, x, mode="train", dropout_seed=5)
        _, dlogits = softmax_ce_loss(tr.logits, y)
        m.zero_grad()
        dx = m.backward(dlogits)
        assert rel_error(dx, numerical_grad(loss, x)) < 1e-4
        for p in m.params():
            num = numerical_grad(loss, p.data)
            if np.linalg.norm(num) < 1e-8:
                # conv biases feeding train-mode batchnorm cancel exactly
                assert np.linalg.norm(p.grad) < 1e-8, p.name
            else:
                assert rel_error(p.grad, num) < 1e-4, p.name

    def test_no_input_gradient_by_default(self):
        m = build_model(TINY, seed=0)
        tr = forward(m, np.zeros((1, 8, 8)))
        assert m.backward(np.ones_like(tr.logits)) is None


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        m = build_model(TINY, seed=8)
        m.layers[1].running_mean.data = np.array([0.1, 0.2])
        path = tmp_path / "m.gzcm"
        save_checkpoint(m, path)
        loaded = load_checkpoint(path)
        assert models_equal(m, loaded)
        raw = path.read_bytes()
        assert raw[:4] == b"GZCM"
        save_checkpoint(loaded, tmp_path / "again.gzcm")
        assert (tmp_path / "again.gzcm").read_bytes() == raw

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.gzcm"
        p.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ValueError, match="bad magic"):
            load_checkpoint(p)
