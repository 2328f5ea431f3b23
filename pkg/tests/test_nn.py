import numpy as np
import pytest

from fedmodal import nn
from fedmodal.errors import (
    ConfigurationError,
    IncompatibleMapsError,
    ShapeError,
    TapeMismatchError,
)

from conftest import finite_difference_param_grads, random_network, relative_error


class TestParameterMap:
    def test_iteration_is_lexicographic(self):
        pm = nn.ParameterMap({"b.weight": np.ones(2), "a.weight": np.ones(3), "a.bias": np.ones(1)})
        assert list(pm) == ["a.bias", "a.weight", "b.weight"]

    def test_entries_are_read_only(self):
        pm = nn.ParameterMap({"w": np.ones(3)})
        with pytest.raises(ValueError):
            pm["w"][0] = 5.0

    def test_source_array_mutation_does_not_leak(self):
        src = np.ones(3)
        pm = nn.ParameterMap({"w": src})
        src[0] = 99.0
        assert pm["w"][0] == 1.0

    def test_equality_is_exact(self):
        a = nn.ParameterMap({"w": np.array([1.0, 2.0])})
        b = nn.ParameterMap({"w": np.array([1.0, 2.0])})
        c = nn.ParameterMap({"w": np.array([1.0, 2.0 + 1e-15])})
        assert a == b
        assert a != c

    def test_non_string_key_rejected(self):
        with pytest.raises(ConfigurationError):
            nn.ParameterMap({3: np.ones(1)})


class TestInitNetwork:
    def test_shapes_and_zero_bias(self):
        net = nn.init_network([nn.LayerSpec(2, 3, "identity", "l0")], seed=7)
        assert net.params["l0.weight"].shape == (2, 3)
        assert net.params["l0.bias"].shape == (3,)
        assert np.all(net.params["l0.bias"] == 0.0)

    def test_glorot_bound(self):
        net = nn.init_network([nn.LayerSpec(6, 6, "relu", "l0")], seed=1)
        bound = np.sqrt(6.0 / 12.0)
        assert np.all(np.abs(net.params["l0.weight"]) <= bound)

    def test_same_seed_bit_identical(self):
        layers = [nn.LayerSpec(4, 5, "relu", "l0"), nn.LayerSpec(5, 2, "identity", "l1")]
        assert nn.init_network(layers, 42).params == nn.init_network(layers, 42).params

    def test_different_seed_differs(self):
        layers = [nn.LayerSpec(4, 5, "relu", "l0")]
        assert nn.init_network(layers, 1).params != nn.init_network(layers, 2).params

    def test_chain_mismatch_rejected(self):
        layers = [nn.LayerSpec(2, 3, "relu", "l0"), nn.LayerSpec(4, 2, "identity", "l1")]
        with pytest.raises(ConfigurationError):
            nn.init_network(layers, 0)

    def test_duplicate_prefix_rejected(self):
        layers = [nn.LayerSpec(2, 2, "relu", "l0"), nn.LayerSpec(2, 2, "identity", "l0")]
        with pytest.raises(ConfigurationError):
            nn.init_network(layers, 0)


class TestForward:
    def test_identity_layer_passthrough(self):
        net = nn.init_network([nn.LayerSpec(2, 2, "identity", "l0")], seed=0)
        params = nn.ParameterMap({"l0.weight": np.eye(2), "l0.bias": np.zeros(2)})
        out, _ = nn.forward(net.with_params(params), np.array([[1.0, 2.0]]))
        assert np.allclose(out, [[1.0, 2.0]])

    def test_relu_clips_negative(self):
        net = nn.init_network([nn.LayerSpec(2, 2, "relu", "l0")], seed=0)
        params = nn.ParameterMap({"l0.weight": np.eye(2), "l0.bias": np.zeros(2)})
        out, _ = nn.forward(net.with_params(params), np.array([[-1.0, 2.0]]))
        assert np.allclose(out, [[0.0, 2.0]])

    def test_leaky_relu_slope(self):
        # leaky_relu(0.01) on pre-activations [-1, 2] -> [-0.01, 2]
        net = nn.init_network([nn.LayerSpec(2, 2, "leaky_relu", "l0", 0.01)], seed=0)
        params = nn.ParameterMap({"l0.weight": np.eye(2), "l0.bias": np.zeros(2)})
        out, _ = nn.forward(net.with_params(params), np.array([[-1.0, 2.0]]))
        assert np.allclose(out, [[-0.01, 2.0]], atol=1e-15)

    def test_feature_mismatch_raises(self):
        net = nn.init_network([nn.LayerSpec(3, 2, "relu", "l0")], seed=0)
        with pytest.raises(ShapeError):
            nn.forward(net, np.ones((1, 2)))

    def test_empty_batch_raises(self):
        net = nn.init_network([nn.LayerSpec(3, 2, "relu", "l0")], seed=0)
        with pytest.raises(ShapeError):
            nn.forward(net, np.ones((0, 3)))

    def test_tape_records_all_layers(self):
        net = random_network(np.random.default_rng(5))
        x = np.random.default_rng(6).normal(size=(3, net.layers[0].in_dim))
        out, tape = nn.forward(net, x)
        assert len(tape.inputs) == len(net.layers)
        assert len(tape.preacts) == len(net.layers)
        assert tape.output is out


class TestBackward:
    def test_zero_output_grad_gives_zero_map(self):
        net = random_network(np.random.default_rng(7))
        x = np.random.default_rng(8).normal(size=(2, net.layers[0].in_dim))
        out, tape = nn.forward(net, x)
        grads, input_grad = nn.backward(net, tape, np.zeros_like(out))
        assert all(np.all(grads[k] == 0.0) for k in grads)
        assert np.all(input_grad == 0.0)

    def test_sum_loss_closed_form(self):
        # y = x W + b with loss = sum(y): dL/db is all ones, dL/dW broadcasts x
        # down columns (single-sample closed form, worked out by hand).
        net = nn.init_network([nn.LayerSpec(2, 3, "identity", "l0")], seed=3)
        x = np.array([[1.5, -2.0]])
        out, tape = nn.forward(net, x)
        grads, input_grad = nn.backward(net, tape, np.ones_like(out))
        assert np.allclose(grads["l0.bias"], np.ones(3))
        assert np.allclose(grads["l0.weight"], np.repeat(x.T, 3, axis=1))
        assert np.allclose(input_grad, net.params["l0.weight"].sum(axis=1)[None, :])

    def test_grad_keys_match_params(self):
        net = random_network(np.random.default_rng(9))
        x = np.random.default_rng(10).normal(size=(2, net.layers[0].in_dim))
        out, tape = nn.forward(net, x)
        grads, _ = nn.backward(net, tape, np.ones_like(out))
        assert set(grads.keys()) == set(net.params.keys())
        assert all(grads[k].shape == net.params[k].shape for k in grads)

    def test_tape_from_other_network_rejected(self):
        net_a = nn.init_network([nn.LayerSpec(2, 2, "relu", "a0")], seed=0)
        net_b = nn.init_network([nn.LayerSpec(2, 2, "relu", "b0")], seed=0)
        out, tape = nn.forward(net_a, np.ones((1, 2)))
        with pytest.raises(TapeMismatchError):
            nn.backward(net_b, tape, np.ones_like(out))

    def test_wrong_grad_shape_rejected(self):
        net = nn.init_network([nn.LayerSpec(2, 2, "relu", "l0")], seed=0)
        out, tape = nn.forward(net, np.ones((1, 2)))
        with pytest.raises(ShapeError):
            nn.backward(net, tape, np.ones((2, 2)))

    @pytest.mark.parametrize("case", range(8))
    def test_matches_finite_differences(self, case):
        rng = np.random.default_rng(100 + case)
        net = random_network(rng)
        x = rng.normal(size=(int(rng.integers(1, 5)), net.layers[0].in_dim))
        target = rng.normal(size=(x.shape[0], net.layers[-1].out_dim))

        def loss_of(params):
            out, _ = nn.forward(net.with_params(params), x)
            return 0.5 * float(((out - target) ** 2).sum())

        out, tape = nn.forward(net, x)
        grads, _ = nn.backward(net, tape, out - target)
        numeric = finite_difference_param_grads(loss_of, net.params)
        for key in grads:
            assert relative_error(grads[key], numeric[key]).max() < 1e-4


class TestSgdStep:
    def test_zero_lr_is_identity(self):
        net = random_network(np.random.default_rng(11))
        grads = nn.ParameterMap({k: np.ones_like(net.params[k]) for k in net.params})
        assert nn.sgd_step(net.params, grads, 0.0) == net.params

    def test_arithmetic(self):
        params = nn.ParameterMap({"w": np.array([1.0])})
        grads = nn.ParameterMap({"w": np.array([2.0])})
        out = nn.sgd_step(params, grads, 0.5)
        assert np.allclose(out["w"], [0.0])

    def test_missing_key_rejected(self):
        params = nn.ParameterMap({"w": np.ones(1), "b": np.ones(1)})
        grads = nn.ParameterMap({"w": np.ones(1)})
        with pytest.raises(IncompatibleMapsError):
            nn.sgd_step(params, grads, 0.1)

    def test_inputs_unmodified(self):
        params = nn.ParameterMap({"w": np.array([1.0, 2.0])})
        grads = nn.ParameterMap({"w": np.array([0.5, 0.5])})
        nn.sgd_step(params, grads, 1.0)
        assert np.allclose(params["w"], [1.0, 2.0])
        assert np.allclose(grads["w"], [0.5, 0.5])

    def test_preserves_keys_and_shapes(self):
        net = random_network(np.random.default_rng(12))
        grads = nn.ParameterMap({k: np.full_like(net.params[k], 0.1) for k in net.params})
        out = nn.sgd_step(net.params, grads, 0.01)
        assert list(out.keys()) == list(net.params.keys())
        assert all(out[k].shape == net.params[k].shape for k in out)


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        assert np.allclose(nn.softmax(np.array([[0.0, 0.0, 0.0]])), [[1 / 3] * 3])

    def test_extreme_logits_stable(self):
        out = nn.softmax(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        assert abs(out[0, 0] - 1.0) < 1e-12
        assert abs(out[0, 1]) < 1e-12

    def test_log_two_closed_form(self):
        out = nn.softmax(np.array([[np.log(2.0), 0.0]]))
        assert np.allclose(out, [[2 / 3, 1 / 3]], atol=1e-15)

    def test_rows_sum_to_one(self, rng):
        logits = rng.normal(scale=100.0, size=(20, 7))
        out = nn.softmax(logits)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out >= 0.0)

    def test_finite_up_to_1e3(self, rng):
        logits = rng.uniform(-1e3, 1e3, size=(50, 9))
        assert np.all(np.isfinite(nn.softmax(logits)))


def test_determinism_after_training_steps():
    # Same seed, same architecture, same data order: bit-identical params
    # after any number of updates.
    def run():
        net = nn.init_network(
            [nn.LayerSpec(4, 8, "relu", "l0"), nn.LayerSpec(8, 3, "identity", "l1")], seed=77
        )
        params = net.params
        data_rng = np.random.default_rng(78)
        x = data_rng.normal(size=(10, 4))
        target = data_rng.normal(size=(10, 3))
        for _ in range(25):
            out, tape = nn.forward(net.with_params(params), x)
            grads, _ = nn.backward(net.with_params(params), tape, out - target)
            params = nn.sgd_step(params, grads, 0.01)
        return params

    assert run() == run()
