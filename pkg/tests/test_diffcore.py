import numpy as np
import pytest

from posewarp import autodiff as ad
from posewarp.autodiff import Tensor
from posewarp.layers import (AdamState, NonFiniteGradient, adam_step, fully_connected, grad_check, instance_norm,
                             instance_norm_reference, leaky_relu, pointwise_linear)

LAYER_TOL = 1e-5


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def readout(rng, shape):
    """Random fixed weights so the checked scalar depends on every output entry."""
    r = rng.normal(size=shape)
    return lambda t: ad.sum(t * r)


def test_pointwise_linear_example():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    w = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
    out = pointwise_linear(x, w, np.array([0.0, 1.0, -1.0])).data
    assert out.shape == (1, 3, 2)
    assert np.array_equal(out[0], [[1, 2], [5, 7], [5, 7]])


def test_pointwise_linear_is_per_vertex(rng):
    x = rng.normal(size=(2, 4, 9))
    w = rng.normal(size=(5, 4))
    perm = rng.permutation(9)
    a = pointwise_linear(x, w).data[..., perm]
    b = pointwise_linear(x[..., perm], w).data
    assert np.allclose(a, b, atol=1e-14)


def test_pointwise_linear_gradient(rng):
    x, w, b = param(rng, 2, 4, 7), param(rng, 5, 4), param(rng, 5)
    f = readout(rng, (2, 5, 7))
    assert grad_check(lambda: f(pointwise_linear(x, w, b)), [x, w, b]) < LAYER_TOL


def test_fully_connected_gradient(rng):
    x, w, b = param(rng, 3, 6), param(rng, 4, 6), param(rng, 4)
    f = readout(rng, (3, 4))
    assert grad_check(lambda: f(fully_connected(x, w, b)), [x, w, b]) < LAYER_TOL


def test_leaky_relu_values_and_gradient(rng):
    assert np.array_equal(leaky_relu(np.array([-1.0, 0.0, 2.0])).data, [-0.2, 0.0, 2.0])
    # keep samples away from the kink so central differences are valid
    data = rng.normal(size=(3, 4, 5))
    data += np.sign(data) * 0.01
    x = Tensor(data, requires_grad=True)
    f = readout(rng, x.shape)
    assert grad_check(lambda: f(leaky_relu(x)), [x]) < LAYER_TOL


def test_instance_norm_statistics(rng):
    x = rng.normal(loc=3.0, scale=2.0, size=(2, 4, 50))
    xhat, mu, sigma = instance_norm(x)
    assert np.allclose(xhat.data.mean(axis=2), 0.0, atol=1e-12)
    var = xhat.data.var(axis=2)
    assert np.all(var <= 1.0) and np.allclose(var, 1.0, atol=1e-4)
    assert np.allclose(mu.data[..., 0], x.mean(axis=2))
    assert np.allclose(sigma.data[..., 0], np.sqrt(x.var(axis=2) + 1e-5))


def test_instance_norm_constant_channel():
    xhat, _, _ = instance_norm(np.full((1, 2, 6), 4.0))
    assert np.array_equal(xhat.data, np.zeros((1, 2, 6)))


def test_instance_norm_rejects_bad_rank():
    with pytest.raises(ValueError):
        instance_norm(np.zeros((3, 4)))


def test_instance_norm_matches_reference(rng):
    x = rng.normal(size=(2, 3, 11))
    for fused, ref in zip(instance_norm(x), instance_norm_reference(x)):
        assert np.allclose(fused.data, ref.data, atol=1e-13)


@pytest.mark.parametrize("output", [0, 1, 2])
def test_instance_norm_gradient(rng, output):
    x = param(rng, 2, 3, 8)
    f = readout(rng, (2, 3, 8) if output == 0 else (2, 3, 1))
    assert grad_check(lambda: f(instance_norm(x)[output]), [x]) < LAYER_TOL


def test_instance_norm_joint_gradient(rng):
    x = param(rng, 2, 3, 8)
    r0, r1, r2 = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 3, 1)), rng.normal(size=(2, 3, 1))

    def fn():
        xhat, mu, sigma = instance_norm(x)
        return ad.sum(xhat * r0) + ad.sum(mu * r1) + ad.sum(sigma * r2)

    assert grad_check(fn, [x]) < LAYER_TOL


def test_modulate_gradient(rng):
    xhat, gamma, beta = param(rng, 2, 3, 6), param(rng, 2, 3, 6), param(rng, 2, 3, 6)
    w = Tensor(rng.uniform(0.1, 0.9, size=(2, 3, 1)), requires_grad=True)
    mu, sigma = param(rng, 2, 3, 1), Tensor(rng.uniform(0.5, 2, size=(2, 3, 1)), requires_grad=True)
    f = readout(rng, (2, 3, 6))
    params = [xhat, gamma, beta, w, mu, sigma]
    assert grad_check(lambda: f(ad.modulate(*params)), params) < LAYER_TOL


@pytest.mark.parametrize("name", ["exp", "log", "sqrt", "sigmoid", "square"])
def test_elementwise_gradients(rng, name):
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    f = readout(rng, (3, 4))
    assert grad_check(lambda: f(getattr(ad, name)(x)), [x]) < LAYER_TOL


def test_broadcast_arithmetic_gradients(rng):
    a, b = param(rng, 3, 4), param(rng, 1, 4)
    c = Tensor(rng.uniform(1, 2, size=(3, 1)), requires_grad=True)
    f = readout(rng, (3, 4))
    assert grad_check(lambda: f((a - b) * a / c + b), [a, b, c]) < LAYER_TOL


def test_logsumexp_gradient_and_stability(rng):
    x = param(rng, 3, 5)
    f = readout(rng, (3,))
    assert grad_check(lambda: f(ad.logsumexp(x, axis=1)), [x]) < LAYER_TOL
    big = ad.logsumexp(np.array([[1000.0, 1000.0]]), axis=1).data
    assert np.allclose(big, 1000.0 + np.log(2.0))


def test_shape_ops_gradients(rng):
    x, y = param(rng, 2, 3, 4), param(rng, 2, 2, 4)
    idx = np.array([0, 2, 2, 1])
    f = readout(rng, (2, 4, 5))

    def fn():
        z = ad.concat([x, y], axis=1)
        z = ad.take(ad.swapaxes(z, 1, 2), idx, axis=1)
        return f(ad.reshape(z, (2, 4, 5)) @ np.eye(5))

    assert grad_check(fn, [x, y]) < LAYER_TOL


def test_matmul_batched_gradient(rng):
    a, b = param(rng, 2, 3, 4), param(rng, 2, 4, 5)
    f = readout(rng, (2, 3, 5))
    assert grad_check(lambda: f(a @ b), [a, b]) < LAYER_TOL


def test_shared_subexpression_accumulates(rng):
    x = param(rng, 4)
    y = x * x + x
    ad.sum(y * y).backward()
    expected = 2 * (x.data ** 2 + x.data) * (2 * x.data + 1)
    assert np.allclose(x.grad, expected)


def test_deep_graph_does_not_recurse():
    x = Tensor(np.ones(2), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    ad.sum(y).backward()
    assert np.array_equal(x.grad, np.ones(2))


def test_grad_check_detects_wrong_backward(rng):
    x = param(rng, 5)

    def wrong():
        out = ad._make(x.data ** 2, (x,), lambda g: (g * x.data,))  # should be 2*g*x
        return ad.sum(out)

    assert grad_check(wrong, [x]) > 0.1


def test_adam_first_step_is_lr_sign():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    p.grad = np.array([0.5, -4.0, 1e-3])
    state = adam_step([("p", p)], AdamState(lr=0.1))
    assert state.t == 1
    assert np.allclose(p.data, [0.9, -1.9, 2.9], atol=1e-6)


def test_adam_matches_textbook(rng):
    p = Tensor(rng.normal(size=4), requires_grad=True)
    ref = p.data.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    state = AdamState(lr=1e-3)
    for t in range(1, 6):
        g = rng.normal(size=4)
        p.grad = g.copy()
        adam_step([("p", p)], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.data, ref, rtol=1e-12, atol=1e-14)


def test_adam_zero_gradient_leaves_parameter():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    adam_step([("p", p)], AdamState())
    assert np.array_equal(p.data, [1.0, 2.0])


def test_adam_rejects_non_finite_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([0.0, np.nan])
    with pytest.raises(NonFiniteGradient, match="refiner.weight"):
        adam_step([("refiner.weight", p)], AdamState())
