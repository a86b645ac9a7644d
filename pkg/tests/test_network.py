import math

import numpy as np
import pytest

from gopnet import network
from gopnet.network import (
    DimensionError, GopBlock, HiddenLayer, ModelFormatError, ModelVersionError, Network,
    NumericError, augment, backward, block_forward, forward, neuron_forward,
)
from gopnet.operators import OperatorError, OperatorSet, enumerate_operator_sets
from gopnet.solver import weighted_mse

from conftest import assert_grad_close

MUL_SUM_TANH = OperatorSet.from_names("mul", "sum", "tanh")
MUL_SUM_RELU = OperatorSet.from_names("mul", "sum", "relu")
MUL_MAX_LINCUT = OperatorSet.from_names("mul", "max", "lincut")
MUL_SUM_LINCUT = OperatorSet.from_names("mul", "sum", "lincut")


def random_block(opset, fan_in, width, rng, scale=1.0):
    return GopBlock(opset, rng.uniform(-scale, scale, (fan_in, width)),
                    rng.uniform(-0.5, 0.5, width))


def make_net(layers_opsets, d, width, c, rng):
    layers, fan_in = [], d
    for opsets in layers_opsets:
        layers.append(HiddenLayer([random_block(o, fan_in, width, rng) for o in opsets]))
        fan_in = width * len(opsets)
    return Network(d, c, layers, rng.normal(0, 0.5, (fan_in + 1, c)))


def test_neuron_forward_examples():
    assert neuron_forward(MUL_SUM_TANH, [1, -1], [0.5, 0.5], 0.0) == 0.0
    assert neuron_forward(MUL_SUM_RELU, [1, 2], [1, 1], -5.0) == 0.0
    assert neuron_forward(MUL_MAX_LINCUT, [1, 4], [1, 1], 0.0) == 1.0


def test_neuron_forward_length_mismatch():
    with pytest.raises(DimensionError):
        neuron_forward(MUL_SUM_TANH, [1, 2, 3], [1, 2], 0.0)


def test_block_forward_zero_weights():
    block = GopBlock(MUL_SUM_TANH, np.zeros((3, 4)), np.zeros(4))
    np.testing.assert_array_equal(block_forward(block, np.ones((5, 3))), np.zeros((5, 4)))


def test_block_forward_matches_scalar_neurons(rng):
    for opset in enumerate_operator_sets()[::5]:
        block = random_block(opset, 4, 3, rng)
        X = rng.normal(size=(6, 4))
        out = block_forward(block, X)
        for n in range(6):
            for j in range(3):
                expected = neuron_forward(opset, X[n], block.weights[:, j], block.bias[j])
                assert out[n, j] == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_block_forward_chunks_give_same_result(rng, monkeypatch):
    block = random_block(OperatorSet.from_names("gauss", "corr1", "tanh"), 5, 4, rng)
    X = rng.normal(size=(50, 5))
    whole = block_forward(block, X)
    monkeypatch.setattr(network, "_CHUNK_ENTRIES", 7)
    np.testing.assert_array_equal(block_forward(block, X), whole)


def test_block_forward_dimension_mismatch(rng):
    block = random_block(MUL_SUM_TANH, 3, 2, rng)
    with pytest.raises(DimensionError):
        block_forward(block, np.ones((4, 2)))


def test_forward_zero_output_weights(rng):
    net = make_net([[MUL_SUM_TANH]], 3, 4, 2, rng)
    net.output_weights = np.zeros_like(net.output_weights)
    _, logits = forward(net, rng.normal(size=(7, 3)))
    np.testing.assert_array_equal(logits, 0.0)


def test_forward_composition(rng):
    net = make_net([[MUL_SUM_TANH, MUL_MAX_LINCUT], [MUL_SUM_RELU]], 3, 4, 2, rng)
    X = rng.normal(size=(7, 3))
    h1 = np.hstack([block_forward(b, X) for b in net.layers[0].blocks])
    h2 = block_forward(net.layers[1].blocks[0], h1)
    hidden, logits = forward(net, X)
    np.testing.assert_array_equal(hidden, h2)
    np.testing.assert_allclose(logits, augment(h2) @ net.output_weights)


def test_forward_checks(rng):
    net = make_net([[MUL_SUM_TANH]], 3, 4, 2, rng)
    with pytest.raises(DimensionError):
        forward(net, np.ones((2, 4)))
    with pytest.raises(DimensionError):
        forward(Network(3, 2), np.ones((2, 3)))


def test_forward_deterministic(rng):
    net = make_net([[MUL_SUM_TANH]], 3, 4, 2, rng)
    X = rng.normal(size=(7, 3))
    np.testing.assert_array_equal(forward(net, X)[1], forward(net, X)[1])


def test_shape_chain_check(rng):
    net = make_net([[MUL_SUM_TANH], [MUL_SUM_TANH]], 3, 4, 2, rng)
    net.check()
    net.layers[1].blocks[0] = random_block(MUL_SUM_TANH, 5, 4, rng)
    with pytest.raises(DimensionError):
        net.check()


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def loss_of(net, X, Y, s):
    return weighted_mse(forward(net, X)[1], Y, s)


def fd_gradient(net, arr, X, Y, s, h=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        up = loss_of(net, X, Y, s)
        arr[idx] = orig - h
        down = loss_of(net, X, Y, s)
        arr[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def test_backward_zero_sample_weights(rng):
    net = make_net([[MUL_SUM_TANH]], 3, 4, 2, rng)
    X = rng.normal(size=(5, 3))
    Y = np.eye(2)[[0, 1, 0, 1, 1]]
    g = backward(net, X, Y, np.zeros(5))
    assert np.all(g.output == 0)
    assert all(np.all(dw == 0) and np.all(db == 0) for dw, db in g.blocks[0])


def test_backward_linear_path_matches_linear_regression_gradient(rng):
    X = rng.uniform(-0.2, 0.2, (6, 3))
    block = GopBlock(MUL_SUM_LINCUT, rng.uniform(-0.5, 0.5, (3, 2)), np.array([0.1, -0.1]))
    Wo = rng.normal(size=(3, 2))
    net = Network(3, 2, [HiddenLayer([block])], Wo)
    Y = np.eye(2)[[0, 1, 1, 0, 1, 0]]
    s = rng.uniform(0.5, 2, 6)
    # in the linear region the model is logits = (X A + b) V + c
    H = X @ block.weights + block.bias
    assert np.all(np.abs(H) < 1)
    R = augment(H) @ Wo - Y
    G = 2.0 / 6 * s[:, None] * R
    g = backward(net, X, Y, s)
    np.testing.assert_allclose(g.output, augment(H).T @ G, rtol=1e-12)
    np.testing.assert_allclose(g.blocks[0][0][0], X.T @ (G @ Wo[:-1].T), rtol=1e-12)
    np.testing.assert_allclose(g.blocks[0][0][1], (G @ Wo[:-1].T).sum(axis=0), rtol=1e-12)


def test_backward_matches_finite_differences_small_net(rng):
    net = make_net([[OperatorSet.from_names("harmonic", "corr1", "tanh")]], 3, 2, 2, rng)
    X = rng.normal(size=(5, 3))
    Y = np.eye(2)[[0, 1, 0, 0, 1]]
    s = rng.uniform(0.5, 2, 5)
    g = backward(net, X, Y, s)
    b = net.layers[0].blocks[0]
    assert_grad_close(g.blocks[0][0][0], fd_gradient(net, b.weights, X, Y, s))
    assert_grad_close(g.blocks[0][0][1], fd_gradient(net, b.bias, X, Y, s))
    assert_grad_close(g.output, fd_gradient(net, net.output_weights, X, Y, s))
    assert g.loss == pytest.approx(loss_of(net, X, Y, s))


def test_backward_two_layer_heterogeneous(rng):
    opsets = [OperatorSet.from_names("gauss", "sum", "tanh"),
              OperatorSet.from_names("dog", "corr2", "tanh")]
    net = make_net([opsets, [OperatorSet.from_names("exp", "sum", "tanh")]], 4, 3, 3, rng)
    X = rng.normal(size=(6, 4))
    Y = np.eye(3)[[0, 1, 2, 0, 1, 2]]
    s = rng.uniform(0.5, 2, 6)
    g = backward(net, X, Y, s)
    for li, layer in enumerate(net.layers):
        for bi, block in enumerate(layer.blocks):
            assert_grad_close(g.blocks[li][bi][0], fd_gradient(net, block.weights, X, Y, s))
            assert_grad_close(g.blocks[li][bi][1], fd_gradient(net, block.bias, X, Y, s))
    assert_grad_close(g.output, fd_gradient(net, net.output_weights, X, Y, s))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_backward_non_finite_reports_layer(rng):
    net = make_net([[MUL_SUM_TANH], [OperatorSet.from_names("quad", "corr2", "lincut")]], 3, 3, 2, rng)
    net.layers[1].blocks[0].weights[:] = np.inf
    with pytest.raises(NumericError) as err:
        backward(net, rng.normal(size=(4, 3)), np.eye(2)[[0, 1, 0, 1]], np.ones(4))
    assert err.value.where == 1


def test_backward_shape_mismatch(rng):
    net = make_net([[MUL_SUM_TANH]], 3, 4, 2, rng)
    with pytest.raises(DimensionError):
        backward(net, np.ones((4, 3)), np.ones((4, 3)), np.ones(4))


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def test_save_load_round_trip_is_bitwise(rng, tmp_path):
    sets = enumerate_operator_sets()
    net = make_net([[sets[7], sets[40]], [sets[71]]], 5, 3, 3, rng)
    net.input_mean = rng.normal(size=5)
    net.input_std = rng.uniform(0.5, 2, 5)
    path = tmp_path / "m.json"
    network.save(net, path)
    back = network.load(path)
    for la, lb in zip(net.layers, back.layers):
        for ba, bb in zip(la.blocks, lb.blocks):
            assert ba.opset == bb.opset
            assert ba.weights.tobytes() == bb.weights.tobytes()
            assert ba.bias.tobytes() == bb.bias.tobytes()
    assert net.output_weights.tobytes() == back.output_weights.tobytes()
    assert net.input_std.tobytes() == back.input_std.tobytes()
    X = rng.normal(size=(20, 5))
    assert forward(net, X)[1].tobytes() == forward(back, X)[1].tobytes()


def test_model_file_uses_operator_names(rng, tmp_path):
    net = make_net([[MUL_SUM_TANH]], 2, 2, 2, rng)
    text = network.dumps(net)
    assert '"nodal": "mul"' in text and '"pool": "sum"' in text and '"act": "tanh"' in text


def test_truncated_file(rng):
    text = network.dumps(make_net([[MUL_SUM_TANH]], 2, 2, 2, rng))
    with pytest.raises(ModelFormatError, match="line"):
        network.loads(text[: len(text) // 2])


def test_unknown_operator(rng):
    text = network.dumps(make_net([[MUL_SUM_TANH]], 2, 2, 2, rng))
    with pytest.raises(OperatorError, match="cube"):
        network.loads(text.replace('"mul"', '"cube"'))


def test_version_mismatch(rng):
    text = network.dumps(make_net([[MUL_SUM_TANH]], 2, 2, 2, rng))
    with pytest.raises(ModelVersionError):
        network.loads(text.replace('"format_version": 1', '"format_version": 99'))


def test_inconsistent_shapes_rejected(rng):
    text = network.dumps(make_net([[MUL_SUM_TANH]], 2, 2, 2, rng))
    with pytest.raises(ModelFormatError):
        network.loads(text.replace('"input_dim": 2', '"input_dim": 3'))


def test_float_text_precision(rng):
    net = make_net([[MUL_SUM_TANH]], 2, 2, 2, rng)
    net.output_weights[0, 0] = math.pi / 3
    assert network.loads(network.dumps(net)).output_weights[0, 0] == math.pi / 3
