"""Finite-difference gradient checks for every differentiable building block.

Each case builds small random inputs, a scalar readout and the list of
tensors to perturb.  Layer cases must agree with central differences to
``LAYER_TOL``; the end-to-end toy pipeline to ``PIPELINE_TOL``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .correspondence import ExtractorConfig, FeatureExtractor, correlation, sinkhorn_log, warp
from .layers import fully_connected, grad_check, instance_norm, leaky_relu, pointwise_linear
from .mesh import Mesh, vertex_neighbors
from .metrics import batched_edge_loss, edge_loss, rec_loss, total_loss
from .model import ModelConfig, PoseTransferNet
from .refinement import ElaIN, ElaINResBlock

LAYER_TOL = 1e-5
PIPELINE_TOL = 1e-4
STEP = 1e-6


@dataclass
class GradResult:
    name: str
    max_rel_error: float
    tol: float
    n_params: int
    seconds: float

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def _param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _weighted(rng, shape):
    r = rng.normal(size=shape)
    return lambda t: ad.sum(t * r)


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return Tensor(x + np.sign(x) * gap, requires_grad=True)


def case_pointwise_linear(rng):
    x, w, b = _param(rng, 2, 4, 7), _param(rng, 5, 4), _param(rng, 5)
    f = _weighted(rng, (2, 5, 7))
    return lambda: f(pointwise_linear(x, w, b)), [x, w, b]


def case_fully_connected(rng):
    x, w, b = _param(rng, 3, 6), _param(rng, 4, 6), _param(rng, 4)
    f = _weighted(rng, (3, 4))
    return lambda: f(fully_connected(x, w, b)), [x, w, b]


def case_leaky_relu(rng):
    x = _away_from_zero(rng, (2, 3, 6))
    f = _weighted(rng, (2, 3, 6))
    return lambda: f(leaky_relu(x)), [x]


def case_instance_norm(rng):
    x = _param(rng, 2, 3, 8)
    f0, f1, f2 = _weighted(rng, (2, 3, 8)), _weighted(rng, (2, 3, 1)), _weighted(rng, (2, 3, 1))

    def fn():
        xhat, mu, sigma = instance_norm(x)
        return f0(xhat) + f1(mu) + f2(sigma)

    return fn, [x]


def case_correlation(rng):
    a, b = _param(rng, 2, 4, 5), _param(rng, 2, 4, 6)
    f = _weighted(rng, (2, 5, 6))
    return lambda: f(correlation(a, b)), [a, b]


def case_sinkhorn(rng):
    cost = Tensor(rng.uniform(0, 2, size=(5, 6)), requires_grad=True)
    f = _weighted(rng, (5, 6))
    # eps well above 0.03 keeps the plan away from numerically one-hot rows
    return lambda: f(sinkhorn_log(cost, 0.3, 5)), [cost]


def case_warp(rng):
    plan = Tensor(rng.uniform(0.01, 0.1, size=(4, 5)), requires_grad=True)
    pose = _param(rng, 5, 3)
    f = _weighted(rng, (4, 3))
    return lambda: f(warp(plan, pose)), [plan, pose]


def case_elain(rng):
    h, f_id = _param(rng, 2, 4, 9), _param(rng, 2, 3, 9)
    layer = ElaIN(4, 3, rng)
    f = _weighted(rng, (2, 4, 9))
    return lambda: f(layer(h, f_id)), [h, f_id] + layer.parameters()


def case_elain_resblock(rng):
    h, f_id = _param(rng, 2, 4, 9), _param(rng, 2, 3, 9)
    block = ElaINResBlock(4, 3, rng)
    f = _weighted(rng, (2, 4, 9))
    return lambda: f(block(h, f_id)), [h, f_id] + block.parameters()


def case_extractor(rng):
    ex = FeatureExtractor(ExtractorConfig((3, 4, 5), 2), rng)
    v = rng.normal(size=(1, 10, 3))
    f = _weighted(rng, (1, 5, 10))
    return lambda: f(ex(v)), ex.parameters()


def case_rec_loss(rng):
    out = _param(rng, 2, 7, 3)
    target = rng.normal(size=(2, 7, 3))
    return lambda: rec_loss(out, target), [out]


def case_edge_loss(rng):
    mesh = toy_mesh(rng)
    out = Tensor(mesh.vertices.copy(), requires_grad=True)
    adj = vertex_neighbors(mesh)
    return lambda: edge_loss(out, adj), [out]


def toy_mesh(rng, n=12):
    """A strip of ``n`` vertices (two rows) with jittered coordinates."""
    half = n // 2
    top = np.stack([np.arange(half), np.zeros(half), np.zeros(half)], axis=1)
    bottom = top + [0.5, 1.0, 0.0]
    v = np.concatenate([top, bottom]) * 0.2 + rng.normal(scale=0.02, size=(2 * half, 3))
    faces = []
    for i in range(half - 1):
        faces.append([i, i + 1, half + i])
        faces.append([i + 1, half + i + 1, half + i])
    return Mesh(v, faces)


def case_pipeline(rng, n=12, divisor=64):
    """Full forward (features, OT, warp, refinement) and the training loss at toy size."""
    model = PoseTransferNet(ModelConfig.scaled(divisor), seed=int(rng.integers(2**31)))
    m_id, m_pose = toy_mesh(rng, n), toy_mesh(rng, n)
    pose_v = m_pose.vertices[rng.permutation(n)]
    target = m_id.vertices + rng.normal(scale=0.05, size=(n, 3))
    adj = vertex_neighbors(m_id)

    def fn():
        out = model(m_id.vertices[None], pose_v[None]).output
        return total_loss(rec_loss(out, target[None]), batched_edge_loss(out, [adj]))

    return fn, model.parameters()


LAYER_CASES = {
    "pointwise_linear": case_pointwise_linear,
    "fully_connected": case_fully_connected,
    "leaky_relu": case_leaky_relu,
    "instance_norm": case_instance_norm,
    "correlation": case_correlation,
    "sinkhorn": case_sinkhorn,
    "warp": case_warp,
    "elain": case_elain,
    "elain_resblock": case_elain_resblock,
    "feature_extractor": case_extractor,
    "rec_loss": case_rec_loss,
    "edge_loss": case_edge_loss,
}


def run_case(name, builder, tol, seed=0, h=STEP):
    rng = np.random.default_rng(seed)
    fn, params = builder(rng)
    start = time.perf_counter()
    err = grad_check(fn, params, h)
    n = sum(p.data.size for p in params)
    return GradResult(name, err, tol, n, time.perf_counter() - start)


def run_suite(seed=0, h=STEP):
    results = [run_case(name, b, LAYER_TOL, seed, h) for name, b in LAYER_CASES.items()]
    results.append(run_case("pipeline", case_pipeline, PIPELINE_TOL, seed, h))
    return results

