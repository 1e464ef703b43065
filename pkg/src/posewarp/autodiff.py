"""A small reverse-mode autodiff engine over numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
that pushes the upstream gradient into them.  Only tensors that (transitively)
depend on a ``requires_grad`` leaf record a graph, so pure inference pays
nothing for bookkeeping.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        owned = set()  # buffers created here, safe to update in place
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    acc = grads[key]
                    if key in owned and acc.shape == pg.shape:
                        acc += pg
                    else:
                        grads[key] = acc + pg
                        owned.add(key)
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape),
                            unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), backward)


def square(x):
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    if not 0 <= slope <= 1:
        keep = x.data >= 0
        return _make(np.where(keep, x.data, slope * x.data), (x,), lambda g: (np.where(keep, g, slope * g),))
    out = np.multiply(x.data, slope)
    np.maximum(x.data, out, out=out)

    def backward(g):
        gx = np.multiply(g, slope)
        np.copyto(gx, g, where=x.data >= 0)
        return (gx,)

    return _make(out, (x,), backward)


def clip_min(x, floor):
    """``max(x, floor)``; the gradient is zero where the floor is active."""
    x = as_tensor(x)
    active = x.data > floor
    return _make(np.where(active, x.data, floor), (x,), lambda g: (g * active,))


# reductions and shape ops


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def logsumexp(x, axis, keepdims=False):
    x = as_tensor(x)
    peak = x.data.max(axis=axis, keepdims=True)
    shifted = np.exp(x.data - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + peak
    soft = shifted / total

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x, a1, a2):
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take(x, index, axis=0):
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    x = as_tensor(x)
    index = np.asarray(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (gx,)

    return _make(np.take(x.data, index, axis=axis), (x,), backward)


# linear algebra


def matmul(a, b):
    """numpy ``matmul`` for operands with at least two dims."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward)


def vertex_affine(x, weight, bias=None):
    """Shared per-vertex affine map: ``out[s, :, n] = W @ x[s, :, n] + b``.

    ``x`` is ``S x D_in x N``; ``weight`` is ``D_out x D_in``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ValueError(f"shape mismatch: weight {weight.shape} vs input {x.shape}")
    out = np.matmul(weight.data, x.data)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
        out += bias.data[None, :, None]
        parents = (x, weight, bias)

    def backward(g):
        gx = np.matmul(weight.data.T, g) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            # per-sample GEMMs accumulate without materializing transposed copies
            gw = g[0] @ x.data[0].T
            for s in range(1, g.shape[0]):
                gw += g[s] @ x.data[s].T
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _make(out, parents, backward)


def dense(x, weight, bias=None):
    """Fully-connected layer on an ``S x D_in`` batch."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ValueError(f"shape mismatch: weight {weight.shape} vs input {x.shape}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads if bias is None else grads + (g.sum(axis=0),)

    return _make(out, parents, backward)


# fused normalization ops (same math as composing the primitives, fewer temporaries)


def instance_norm(x, eps):
    """Per (sample, channel) normalization over the last axis.

    Returns three tensors ``(normalized, mean, std)`` that share one forward
    pass but carry separate backward rules, so gradients reach ``x`` through
    whichever of them the caller uses.
    """
    x = as_tensor(x)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    sigma = np.sqrt(np.einsum("...i,...i->...", xhat, xhat)[..., None] / n + eps)
    inv = 1.0 / sigma
    xhat *= inv

    def back_xhat(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = np.einsum("...i,...i->...", g, xhat)[..., None] / n
        out = xhat * gxm
        np.subtract(g, out, out=out)
        out -= gm
        out *= inv
        return (out,)

    def back_mu(g):
        return (np.broadcast_to(g / n, x.shape),)

    def back_sigma(g):
        return (xhat * (g / n),)

    return _make(xhat, (x,), back_xhat), _make(mu, (x,), back_mu), _make(sigma, (x,), back_sigma)


def modulate(xhat, gamma, beta, weight, mu, sigma):
    """``(w*gamma + (1-w)*sigma) * xhat + w*beta + (1-w)*mu``."""
    xhat, gamma, beta, weight, mu, sigma = map(as_tensor, (xhat, gamma, beta, weight, mu, sigma))
    w = weight.data
    scale = w * gamma.data + (1.0 - w) * sigma.data
    out = scale * xhat.data
    out += w * beta.data
    out += (1.0 - w) * mu.data
    # w, mu and sigma are usually per (sample, channel): reduce before multiplying
    pooled = all(t.ndim == xhat.ndim and t.shape[-1] == 1 for t in (weight, mu, sigma))

    def backward(g):
        gx = g * xhat.data
        g_gamma = gx * w if gamma.requires_grad else None
        g_beta = g * w if beta.requires_grad else None
        if pooled:
            sum_gx = gx.sum(axis=-1, keepdims=True)
            sum_g = g.sum(axis=-1, keepdims=True)
            g_w = None
            if weight.requires_grad:
                g_w = (np.einsum("...i,...i->...", gx, gamma.data)[..., None] - sigma.data * sum_gx
                       + np.einsum("...i,...i->...", g, beta.data)[..., None] - mu.data * sum_g)
                g_w = unbroadcast(g_w, weight.shape)
            g_mu = unbroadcast(sum_g * (1.0 - w), mu.shape) if mu.requires_grad else None
            g_sigma = unbroadcast(sum_gx * (1.0 - w), sigma.shape) if sigma.requires_grad else None
        else:
            g_w = None
            if weight.requires_grad:
                g_w = unbroadcast(gx * (gamma.data - sigma.data) + g * (beta.data - mu.data), weight.shape)
            g_mu = unbroadcast(g * (1.0 - w), mu.shape) if mu.requires_grad else None
            g_sigma = unbroadcast(gx * (1.0 - w), sigma.shape) if sigma.requires_grad else None
        # gx is no longer needed; reuse its buffer for the input gradient
        np.multiply(g, scale, out=gx)
        return gx, g_gamma, g_beta, g_w, g_mu, g_sigma

    return _make(out, (xhat, gamma, beta, weight, mu, sigma), backward)
