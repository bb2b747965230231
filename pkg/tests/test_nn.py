"""Network forward/backward correctness, bounds, and serialization."""

import numpy as np
import pytest

from lumpfit import nn
from lumpfit.errors import DimensionMismatch
from lumpfit.gradients import central_difference

# frozen at first build: init_glorot((2,10,1), seed=42, output_scale=1.0), input (0.5, 0.5)
GOLDEN_SEED42_OUTPUT = 0.5492691589723171


def zero_net(dims=(2, 10, 1), scale=1.0):
    return nn.MLPParams(
        layer_dims=dims,
        weights=[np.zeros((do, di)) for di, do in zip(dims[:-1], dims[1:])],
        biases=[np.zeros(do) for do in dims[1:]],
        output_scale=scale,
    )


def test_swish_values():
    assert nn.swish(0.0) == 0.0
    assert abs(nn.swish(10.0) - 9.999546) < 1e-5
    assert abs(nn.swish(-10.0) - (-0.00045397868702434395)) < 1e-12
    x = np.linspace(-5, 5, 11)
    assert np.allclose(nn.swish(-x), -x / (1 + np.exp(x)))


def test_forward_zero_weights_is_half_scale():
    net = zero_net(scale=4000.0)
    for x in ([0.0, 0.0], [0.5, -3.0], [100.0, 1e-3]):
        assert nn.forward(net, np.array(x)) == pytest.approx(2000.0, abs=0)


def test_forward_golden_value():
    net = nn.init_glorot((2, 10, 1), seed=42, output_scale=1.0)
    assert nn.forward(net, np.array([0.5, 0.5])) == pytest.approx(GOLDEN_SEED42_OUTPUT, abs=1e-15)


def test_forward_strict_bound_random_probes():
    rng = np.random.default_rng(7)
    for trial in range(200):
        net = nn.init_glorot((2, 10, 1), seed=int(rng.integers(1 << 31)), output_scale=4000.0)
        x = rng.uniform(-2.0, 2.0, size=(2, 50))
        out = nn.forward(net, x)
        assert np.all(out > 0.0) and np.all(out < 4000.0)


def test_forward_dimension_mismatch():
    net = zero_net()
    with pytest.raises(DimensionMismatch):
        nn.forward(net, np.array([1.0, 2.0, 3.0]))


def test_init_glorot_deterministic_and_counted():
    a = nn.init_glorot((2, 10, 1), seed=3)
    b = nn.init_glorot((2, 10, 1), seed=3)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert nn.flatten_params(a).size == 41
    assert nn.n_params((1, 5, 5, 1)) == 46
    bound = np.sqrt(6.0 / (2 + 10))
    assert np.max(np.abs(a.weights[0])) <= bound
    assert all(np.all(bias == 0.0) for bias in a.biases)


@pytest.mark.parametrize("dims", [(2, 10, 1), (1, 5, 5, 1)])
def test_backward_matches_finite_differences(dims):
    net = nn.init_glorot(dims, seed=11, output_scale=3.0)
    x = np.linspace(-0.4, 0.8, dims[0])
    grad, gx = nn.backward(net, x, upstream=1.0)

    def f_params(vec):
        return nn.forward(nn.unflatten_params(vec, net), x)

    fd = central_difference(f_params, nn.flatten_params(net), eps=1e-6)
    err = np.abs(grad - fd)
    tol = np.maximum(1e-6 * np.abs(fd), 1e-9)
    assert np.all(err <= tol)

    def f_input(v):
        return nn.forward(net, v)

    fd_x = central_difference(f_input, x, eps=1e-6)
    assert np.all(np.abs(gx - fd_x) <= np.maximum(1e-6 * np.abs(fd_x), 1e-9))


def test_backward_zero_upstream_and_constant_net():
    net = nn.init_glorot((2, 10, 1), seed=5, output_scale=2.0)
    grad, gx = nn.backward(net, np.array([0.3, -0.2]), upstream=0.0)
    assert np.all(grad == 0.0) and np.all(gx == 0.0)
    # zero weights: output is constant in the input
    _, gx0 = nn.backward(zero_net(), np.array([0.7, 0.1]), upstream=1.0)
    assert np.allclose(gx0, 0.0)


def test_backward_batch_sums_param_grads():
    net = nn.init_glorot((2, 10, 1), seed=9, output_scale=1.5)
    xs = np.array([[0.1, 0.5, -0.3], [0.2, -0.1, 0.4]])
    up = np.array([1.0, -2.0, 0.5])
    g_batch, gx_batch = nn.backward(net, xs, upstream=up)
    g_sum = np.zeros_like(g_batch)
    for i in range(3):
        g_i, gx_i = nn.backward(net, xs[:, i], upstream=float(up[i]))
        g_sum += g_i
        assert np.allclose(gx_batch[:, i], gx_i, rtol=1e-13, atol=1e-15)
    assert np.allclose(g_batch, g_sum, rtol=1e-12, atol=1e-14)


def test_forward_is_smooth():
    # no activation kinks: FD derivative insensitive to halving the step
    net = nn.init_glorot((2, 10, 1), seed=21, output_scale=1.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-1.5, 1.5, size=2)
        fd1 = central_difference(lambda v: nn.forward(net, v), x, eps=1e-4)
        fd2 = central_difference(lambda v: nn.forward(net, v), x, eps=5e-5)
        assert np.allclose(fd1, fd2, rtol=1e-5, atol=1e-10)


def test_serialization_round_trip(tmp_path):
    net = nn.init_glorot((1, 5, 5, 1), seed=33, output_scale=4000.0)
    path = tmp_path / "net.txt"
    nn.save_mlp(net, path)
    loaded = nn.load_mlp(path)
    assert loaded.layer_dims == net.layer_dims
    assert loaded.output_scale == net.output_scale
    assert loaded.seed == 33
    assert np.array_equal(nn.flatten_params(loaded), nn.flatten_params(net))
