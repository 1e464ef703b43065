"""Dense correspondence: vertex features, cosine correlation, entropic OT, warping."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Linear, Module, instance_norm, leaky_relu
from .mesh import Mesh

SINKHORN_EPS = 0.03
SINKHORN_ITERS = 5
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class ExtractorConfig:
    widths: tuple = (64, 128, 256)
    n_resblocks: int = 4

    @property
    def out_width(self):
        return self.widths[-1]

    def scaled(self, factor):
        return ExtractorConfig(tuple(max(1, w // factor) for w in self.widths), self.n_resblocks)


class ConvNormAct(Module):
    def __init__(self, d_in, d_out, rng):
        # bias is cancelled by the normalization that follows
        self.conv = Linear(d_in, d_out, rng, bias=False)

    def __call__(self, x):
        return leaky_relu(instance_norm(self.conv(x))[0])


class ResBlock(Module):
    """Conv -> IN -> LeakyReLU -> Conv -> IN, plus identity skip."""

    def __init__(self, width, rng):
        self.conv1 = Linear(width, width, rng, bias=False)
        self.conv2 = Linear(width, width, rng, bias=False)

    def __call__(self, x):
        h = leaky_relu(instance_norm(self.conv1(x))[0])
        h = instance_norm(self.conv2(h))[0]
        return x + h


class FeatureExtractor(Module):
    """Three Conv-IN-LeakyReLU layers followed by the adaptive feature block."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        dims = (3,) + tuple(cfg.widths)
        self.layers = [ConvNormAct(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        self.resblocks = [ResBlock(cfg.out_width, rng) for _ in range(cfg.n_resblocks)]
        self.head = Linear(cfg.out_width, cfg.out_width, rng)

    def __call__(self, vertices):
        """``vertices`` is ``S x N x 3`` (array or Tensor); returns ``S x D x N``."""
        x = ad.swapaxes(ad.as_tensor(vertices), 1, 2)
        for layer in self.layers:
            x = layer(x)
        for block in self.resblocks:
            x = block(x)
        return self.head(x)


def extract_features(vertices, extractor):
    """Features for one ``N x 3`` vertex array, returned as a ``D x N`` array."""
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3 or len(v) < 1:
        raise ValueError(f"expected N x 3 vertices, got {v.shape}")
    return extractor(v[None]).data[0]


def correlation(f_id, f_pose):
    """Cosine similarity between every identity column and every pose column.

    Accepts ``D x N`` arrays or batched ``S x D x N`` tensors; the result is
    ``N_id x N_pose`` (batched likewise).
    """
    a, b = ad.as_tensor(f_id), ad.as_tensor(f_pose)
    batched = a.ndim == 3
    if not batched:
        a, b = ad.reshape(a, (1,) + a.shape), ad.reshape(b, (1,) + b.shape)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"channel mismatch: {a.shape[1]} vs {b.shape[1]}")
    a = a / _column_norms(a)
    b = b / _column_norms(b)
    c = ad.matmul(ad.swapaxes(a, 1, 2), b)
    return c if batched else ad.reshape(c, c.shape[1:])


def _column_norms(f):
    norms = ad.sqrt(ad.sum(ad.square(f), axis=1, keepdims=True))
    if (norms.data < NORM_FLOOR).any():
        warnings.warn("zero-norm feature column clamped before cosine similarity", RuntimeWarning,
                      stacklevel=3)
        norms = ad.clip_min(norms, NORM_FLOOR)
    return norms


@dataclass
class TransportPlan:
    plan: np.ndarray
    eps: float
    iterations: int
    col_errors: list | None = None

    @property
    def row_error(self):
        n = self.plan.shape[-2]
        return float(np.abs(self.plan.sum(axis=-1) - 1.0 / n).max())

    @property
    def col_error(self):
        """L1 deviation of the column sums from the uniform pose marginal."""
        m = self.plan.shape[-1]
        return float(np.abs(self.plan.sum(axis=-2) - 1.0 / m).sum(axis=-1).max())


def sinkhorn_log(cost, eps=SINKHORN_EPS, i_max=SINKHORN_ITERS, trace=None):
    """Entropic OT plan with uniform marginals, computed with log-sum-exp scaling.

    Same recursion as the multiplicative form ``b = (1/m) / (U^T a)``,
    ``a = (1/n) / (U b)`` with ``U = exp(-Z/eps)``, but on ``log a`` and
    ``log b`` so that ``exp(-2/0.03)`` never has to be formed.  Differentiable
    through every unrolled iteration.  Works on ``n x m`` or ``S x n x m``.

    If ``trace`` is a list, the column-marginal L1 error of the plan after each
    iteration is appended to it.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if i_max < 1:
        raise ValueError(f"i_max must be at least 1, got {i_max}")
    cost = ad.as_tensor(cost)
    if not np.isfinite(cost.data).all():
        raise ValueError("cost matrix has non-finite entries")
    n, m = cost.shape[-2:]
    log_u = cost * (-1.0 / eps)
    log_row, log_col = -np.log(n), -np.log(m)
    log_a = Tensor(np.full(cost.shape[:-1] + (1,), log_row))
    for _ in range(i_max):
        log_b = log_col - ad.logsumexp(log_u + log_a, axis=-2, keepdims=True)
        log_a = log_row - ad.logsumexp(log_u + log_b, axis=-1, keepdims=True)
        if trace is not None:
            plan = np.exp(log_a.data + log_u.data + log_b.data)
            trace.append(float(np.abs(plan.sum(axis=-2) - 1.0 / m).sum()))
    return ad.exp(log_a + log_u + log_b)


def sinkhorn(cost, eps=SINKHORN_EPS, i_max=SINKHORN_ITERS, track=False):
    trace = [] if track else None
    plan = sinkhorn_log(np.asarray(cost, dtype=np.float64), eps, i_max, trace)
    if not np.isfinite(plan.data).all():
        raise FloatingPointError("non-finite transport plan")
    return TransportPlan(plan.data, eps, i_max, trace)


def warp(plan, pose_vertices):
    """Move every identity vertex to its plan-weighted average of pose vertices.

    Rows of the plan sum to ``1/N_id``; scaling by ``N_id`` turns each row into
    convex weights.  ``plan`` is ``[S x] N_id x N_pose``, ``pose_vertices`` is
    ``[S x] N_pose x 3``.
    """
    plan = ad.as_tensor(plan.plan if isinstance(plan, TransportPlan) else plan)
    rows = plan.data.sum(axis=-1)
    if (rows < 1e-15).any():
        bad = np.argwhere(rows < 1e-15)[0]
        raise ValueError(f"transport plan row {tuple(int(i) for i in bad)} has (near-)zero mass")
    n_id = plan.shape[-2]
    return ad.matmul(plan, pose_vertices) * float(n_id)


def build_warped_mesh(warped_vertices, identity_mesh):
    v = np.asarray(warped_vertices.data if isinstance(warped_vertices, Tensor) else warped_vertices)
    if v.shape != (identity_mesh.n_vertices, 3):
        raise ValueError(f"warped vertices {v.shape} do not match identity mesh "
                         f"({identity_mesh.n_vertices} vertices)")
    return Mesh(v, identity_mesh.faces, identity_mesh.name + "_warp" if identity_mesh.name else "warp")
