"""Layer primitives, parameter containers, finite-difference checking and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NORM_EPS = 1e-5
LEAKY_SLOPE = 0.2


class NonFiniteGradient(FloatingPointError):
    pass


# functional layers


def pointwise_linear(x, weight, bias=None):
    """1x1 convolution over vertices: the same affine map applied at every vertex."""
    return ad.vertex_affine(x, weight, bias)


def fully_connected(x, weight, bias=None):
    return ad.dense(x, weight, bias)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return ad.leaky_relu(x, slope)


def instance_norm(x, eps=NORM_EPS):
    """Normalize each (sample, channel) over the vertex axis.

    Returns ``(normalized, mean, std)`` with ``std = sqrt(var + eps)``.
    Statistics stay in the graph, so gradients flow through them.
    """
    x = ad.as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"expected S x D x N features, got {x.shape}")
    return ad.instance_norm(x, eps)


# parameter containers


def instance_norm_reference(x, eps=NORM_EPS):
    """:func:`instance_norm` assembled from elementwise primitives (cross-check)."""
    x = ad.as_tensor(x)
    mu = ad.mean(x, axis=2, keepdims=True)
    centered = x - mu
    sigma = ad.sqrt(ad.mean(ad.square(centered), axis=2, keepdims=True) + eps)
    return centered / sigma, mu, sigma


def init_uniform(rng, d_out, d_in):
    bound = np.sqrt(1.0 / d_in)
    return rng.uniform(-bound, bound, size=(d_out, d_in))


class Module:
    """Base for anything owning parameters.

    Parameters are ``Tensor`` attributes with ``requires_grad``; child modules
    are ``Module`` attributes or lists of them.  Registration order is
    attribute assignment order, which fixes the checkpoint layout.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    """Per-vertex (1x1 conv) layer.  ``bias=False`` where instance norm follows."""

    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = Tensor(init_uniform(rng, d_out, d_in), requires_grad=True)
        self.bias = None
        if bias:
            bound = np.sqrt(1.0 / d_in)
            self.bias = Tensor(rng.uniform(-bound, bound, size=d_out), requires_grad=True)

    @property
    def d_in(self):
        return self.weight.shape[1]

    @property
    def d_out(self):
        return self.weight.shape[0]

    def __call__(self, x):
        return pointwise_linear(x, self.weight, self.bias)


class Dense(Linear):
    def __call__(self, x):
        return fully_connected(x, self.weight, self.bias)


# gradient checking


def grad_check(fn, params, h=1e-6):
    """Worst relative error between backprop and central differences.

    ``fn`` rebuilds a scalar ``Tensor`` from the current values of ``params``
    on every call.  The denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    for p in params:
        p.grad = None
    out = fn()
    if not np.isfinite(out.data).all():
        raise FloatingPointError("function value is not finite")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + h
            up = float(fn().data)
            flat[k] = saved - h
            down = float(fn().data)
            flat[k] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"function value is not finite near {p.name or 'parameter'}[{k}]")
            numeric = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[k]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


# optimizer


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(named_params, state):
    """One bias-corrected Adam update in place.

    ``named_params`` is a list of ``(name, Tensor)`` whose ``.grad`` is set;
    a missing gradient counts as zero.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for _, p in named_params]
        state.v = [np.zeros_like(p.data) for _, p in named_params]
    grads = []
    for name, p in named_params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
        grads.append(g)
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    # step * m / (sqrt(v / c2) + eps) == k * m / (sqrt(v) + eps * sqrt(c2))
    k = state.lr * np.sqrt(c2) / c1
    eps = state.eps * np.sqrt(c2)
    for (_, p), g, m, v in zip(named_params, grads, state.m, state.v):
        tmp = np.multiply(g, 1.0 - state.beta1)
        m *= state.beta1
        m += tmp
        np.square(g, out=tmp)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= k
        p.data -= tmp
    return state
