import numpy as np
import pytest

from prunekit.arch import ArchSpec, LayerSpec, build_arch
from prunekit.network import Network
from prunekit.tensor import softmax_cross_entropy

from oracles import central_difference, rel_err


def residual_arch():
    L = LayerSpec
    layers = (L("input", "input", 2, 2, out_spatial=(4, 4)),
              L("a", "conv", 2, 3, 3, 1, 1, (4, 4), ("input",)),
              L("b", "conv", 3, 3, 3, 1, 1, (4, 4), ("a",)),
              L("sum", "add", 3, 3, out_spatial=(4, 4), predecessors=("b", "a")),
              L("p", "pool", 3, 3, 2, 2, 0, (2, 2), ("sum",)),
              L("c", "conv", 3, 4, 3, 2, 1, (1, 1), ("p",)),
              L("fc", "linear", 4, 3, predecessors=("c",)),
              L("output", "output", 3, 3, predecessors=("fc",)))
    return ArchSpec("res", layers, ("a", "b", "c"))


def check_gradients(net, x, y, rng, per_param=8):
    def loss():
        return softmax_cross_entropy(net(x), y)[0]
    net.zero_grad()
    _, g = softmax_cross_entropy(net(x), y)
    net.backward(g)
    for name, p in net.parameters():
        for _ in range(per_param):
            i = tuple(rng.integers(0, d) for d in p.shape)
            assert rel_err(p.grad[i], central_difference(loss, p.data, i)) < 1e-4, name


def test_residual_graph_gradients(rng):
    net = Network.init(residual_arch(), 3)
    x = rng.uniform(-1, 1, (5, 2, 4, 4))
    check_gradients(net, x, rng.integers(0, 3, 5), rng)


def test_tinyconvnet_gradients(rng):
    net = Network.init(build_arch("tinyconvnet", 4), 0)
    x = rng.uniform(-1, 1, (3, 3, 8, 8))
    check_gradients(net, x, rng.integers(0, 4, 3), rng, per_param=5)


def test_forward_shapes_and_determinism(rng):
    net = Network.init(build_arch("tinyconvnet"), 0)
    x = rng.uniform(-1, 1, (7, 3, 8, 8))
    out = net(x)
    assert out.shape == (7, 10)
    assert out.tobytes() == Network.init(build_arch("tinyconvnet"), 0)(x).tobytes()
    np.testing.assert_array_equal(net.predict(x, batch_size=3), out.argmax(1))


def test_backward_accumulates(rng):
    net = Network.init(build_arch("tinyconvnet"), 1)
    x = rng.uniform(-1, 1, (2, 3, 8, 8))
    g = rng.normal(size=(2, 10))
    net(x)
    net.backward(g)
    once = net.weights["conv1"].grad.copy()
    net(x)
    net.backward(g)
    np.testing.assert_allclose(net.weights["conv1"].grad, 2 * once, rtol=1e-12)


def test_copy_is_deep():
    net = Network.init(build_arch("tinyconvnet"), 0)
    other = net.copy()
    other.weights["conv1"].data[0] = 0.0
    assert net.weights["conv1"].data[0].any()


def test_parameter_names():
    names = [n for n, _ in Network.init(build_arch("tinyconvnet"), 0).parameters()]
    assert names == ["conv1", "conv2", "conv3", "fc", "fc.bias"]
