import numpy as np
import pytest

from goalcc.nn import (
    Adam,
    CheckpointIOError,
    CheckpointVersionError,
    Conv1d,
    Dense,
    InputTooShortError,
    Param,
    Relu,
    ShapeMismatchError,
    Tanh,
    adam_scalar_update,
    grad_check,
    load_tensors,
    mse_loss,
    save_tensors,
)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestDense:
    def test_identity(self):
        d = Dense(3, 3, rng())
        d.W.value = np.eye(3)
        d.b.value = np.zeros(3)
        x = np.array([[1.0, -2.0, 3.0]])
        assert np.array_equal(d.forward(x), x)

    def test_hand_chain_rule_1x1(self):
        d = Dense(1, 1, rng())
        d.W.value = np.array([[2.0]])
        d.b.value = np.array([3.0])
        x = np.array([[5.0]])
        y = d.forward(x)
        assert y[0, 0] == 13.0
        dx = d.backward(np.array([[1.0]]))
        assert d.W.grad[0, 0] == 5.0
        assert d.b.grad[0] == 1.0
        assert dx[0, 0] == 2.0

    def test_shape_mismatch(self):
        d = Dense(3, 2, rng())
        with pytest.raises(ShapeMismatchError):
            d.forward(np.zeros((1, 4)))
        d.forward(np.zeros((1, 3)))
        with pytest.raises(ShapeMismatchError):
            d.backward(np.zeros((1, 3)))


class TestConv1d:
    def test_all_ones_sums_window(self):
        c = Conv1d(in_channels=2, n_filters=1, width=3, rng=rng())
        c.W.value = np.ones_like(c.W.value)
        c.b.value = np.zeros_like(c.b.value)
        x = np.ones((1, 5, 2))
        y = c.forward(x)
        # every output = window width * channels
        assert np.allclose(y, 6.0)

    def test_length_16_gives_14(self):
        c = Conv1d(4, 32, 3, rng())
        y = c.forward(np.zeros((2, 16, 4)))
        assert y.shape == (2, 14, 32)

    def test_too_short(self):
        c = Conv1d(4, 32, 3, rng())
        with pytest.raises(InputTooShortError):
            c.forward(np.zeros((1, 2, 4)))


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = Param("p", np.array([1.0, -2.0]))
        opt = Adam([p], lr=0.1)
        before = p.value.copy()
        for _ in range(5):
            p.zero_grad()
            opt.step()
        assert np.array_equal(p.value, before)

    def test_first_step_is_lr_times_sign(self):
        p = Param("p", np.array([0.0]))
        opt = Adam([p], lr=0.01)
        p.grad[...] = 3.7
        opt.step()
        assert p.value[0] == pytest.approx(-0.01, rel=1e-6)

    def test_constant_gradient_update_magnitude_approaches_lr(self):
        p = Param("p", np.array([0.0]))
        opt = Adam([p], lr=0.001)
        prev = p.value[0]
        for _ in range(1000):
            p.zero_grad()
            p.grad[...] = 0.42
            opt.step()
            step = prev - p.value[0]
            prev = p.value[0]
        assert step == pytest.approx(0.001, rel=1e-4)

    def test_scalar_helper_matches_class(self):
        p = Param("p", np.array([1.0, 2.0, 3.0]))
        opt = Adam([p], lr=0.05)
        state: dict = {}
        vec = np.array([1.0, 2.0, 3.0])
        g = np.array([0.3, -0.1, 0.0])
        for _ in range(7):
            p.zero_grad()
            p.grad[...] = g
            opt.step()
            vec += adam_scalar_update(state, g, lr=0.05)
        assert np.allclose(vec, p.value, atol=1e-12)


def two_layer_tanh_loss(layers, x, target):
    d1, a1, d2 = layers

    def loss_fn():
        for p in d1.params() + d2.params():
            p.zero_grad()
        y = d2.forward(a1.forward(d1.forward(x)))
        loss, dy = mse_loss(y, target)
        d1.backward(a1.backward(d2.backward(dy)))
        return loss

    return loss_fn


class TestGradCheck:
    def test_linear_network_is_exact(self):
        d = Dense(4, 2, rng(1))
        x = rng(2).standard_normal((3, 4))
        target = rng(3).standard_normal((3, 2))

        def loss_fn():
            for p in d.params():
                p.zero_grad()
            loss, dy = mse_loss(d.forward(x), target)
            d.backward(dy)
            return loss

        report = grad_check(loss_fn, d.params())
        assert report.max_rel_error < 1e-8

    def test_two_layer_tanh_under_tolerance(self):
        for seed in range(5):
            d1 = Dense(5, 8, rng(seed))
            d2 = Dense(8, 2, rng(seed + 100))
            layers = (d1, Tanh(), d2)
            x = rng(seed + 200).standard_normal((4, 5))
            target = rng(seed + 300).standard_normal((4, 2))
            report = grad_check(two_layer_tanh_loss(layers, x, target),
                                d1.params() + d2.params())
            assert report.passed(1e-4), report

    def test_corrupted_backward_detected(self):
        d = Dense(3, 3, rng(5))
        x = rng(6).standard_normal((2, 3))
        target = rng(7).standard_normal((2, 3))

        def bad_loss_fn():
            for p in d.params():
                p.zero_grad()
            loss, dy = mse_loss(d.forward(x), target)
            d.backward(dy)
            d.W.grad *= 1.5  # deliberate corruption
            return loss

        report = grad_check(bad_loss_fn, d.params())
        assert report.max_rel_error > 1e-4
        assert report.worst_param == "dense.W"

    def test_conv_and_relu_gradients(self):
        c = Conv1d(3, 4, 3, rng(8))
        act = Relu()
        x = rng(9).standard_normal((2, 10, 3))
        target = rng(10).standard_normal((2, 8, 4))

        def loss_fn():
            for p in c.params():
                p.zero_grad()
            loss, dy = mse_loss(act.forward(c.forward(x)), target)
            c.backward(act.backward(dy))
            return loss

        report = grad_check(loss_fn, c.params())
        assert report.passed(1e-4), report


class TestCheckpointFile:
    def test_round_trip_bit_exact(self, tmp_path):
        tensors = {
            "a.W": rng(11).standard_normal((4, 3)),
            "a.b": rng(12).standard_normal(4),
            "scalar": np.array(3.14),
        }
        path = str(tmp_path / "w.ckpt")
        save_tensors(path, tensors, meta={"widths": [8, 8]})
        loaded, meta = load_tensors(path)
        assert meta == {"widths": [8, 8]}
        assert list(loaded) == list(tensors)
        for k in tensors:
            assert loaded[k].shape == tensors[k].shape
            assert np.array_equal(loaded[k], tensors[k])

    def test_truncated_file(self, tmp_path):
        path = str(tmp_path / "w.ckpt")
        save_tensors(path, {"a": np.ones(10)})
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-8])
        with pytest.raises(CheckpointIOError):
            load_tensors(path)

    def test_version_mismatch(self, tmp_path):
        path = str(tmp_path / "w.ckpt")
        save_tensors(path, {"a": np.ones(2)})
        blob = open(path, "rb").read()
        open(path, "wb").write(blob.replace(b"goalcc-weights v1", b"goalcc-weights v9", 1))
        with pytest.raises(CheckpointVersionError):
            load_tensors(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointIOError):
            load_tensors(str(tmp_path / "nope.ckpt"))

    def test_garbage_file(self, tmp_path):
        path = str(tmp_path / "g.ckpt")
        open(path, "wb").write(b"not a checkpoint at all\ndata\n")
        with pytest.raises(CheckpointIOError):
            load_tensors(path)
