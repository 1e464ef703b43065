"""Training losses and point-set evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from . import autodiff as ad
from .mesh import directed_edges

LAMBDA_REC = 2000.0
# scale factors used when reporting (PMD and CD in 1e-3, EMD in 1e-2)
PMD_SCALE = 1e3
CD_SCALE = 1e3
EMD_SCALE = 1e2


@dataclass(frozen=True)
class LossReport:
    rec: float
    edge: float
    total: float
    lambda_rec: float = LAMBDA_REC


@dataclass(frozen=True)
class EvalReport:
    pmd: float
    cd: float
    emd: float

    def scaled(self):
        return EvalReport(self.pmd * PMD_SCALE, self.cd * CD_SCALE, self.emd * EMD_SCALE)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"vertex arrays differ in shape: {a.shape} vs {b.shape}")


def rec_loss(out, target):
    """Mean squared per-vertex distance; ``out`` may be a Tensor, batched or not."""
    out = ad.as_tensor(out)
    target = np.asarray(getattr(target, "data", target), dtype=np.float64)
    _check_pair(out.data, target)
    n_points = int(np.prod(out.shape[:-1]))
    return ad.sum(ad.square(out - target)) * (1.0 / n_points)


def edge_loss(out, adjacency):
    """Sum over vertices of squared distances to each neighbor (edges counted twice).

    ``out`` is ``[S x] N x 3``; ``adjacency`` comes from :func:`vertex_neighbors`.
    For a batch the per-sample losses are averaged.
    """
    out = ad.as_tensor(out)
    src, dst = directed_edges(adjacency)
    n = out.shape[-2]
    if src.size and max(src.max(), dst.max()) >= n:
        raise IndexError(f"adjacency refers to vertex >= {n}")
    diff = ad.take(out, src, axis=-2) - ad.take(out, dst, axis=-2)
    total = ad.sum(ad.square(diff))
    if out.ndim == 3:
        total = total * (1.0 / out.shape[0])
    return total


def total_loss(rec, edge, lambda_rec=LAMBDA_REC):
    if lambda_rec <= 0:
        raise ValueError("lambda_rec must be positive")
    return rec * lambda_rec + edge


def loss_report(rec, edge, lambda_rec=LAMBDA_REC):
    r, e = float(getattr(rec, "data", rec)), float(getattr(edge, "data", edge))
    return LossReport(r, e, lambda_rec * r + e, lambda_rec)


def pmd(out, target):
    """Point-wise mesh distance: mean squared distance between ordered vertices."""
    a, b = np.asarray(out, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_pair(a, b)
    return float(np.mean(np.sum((a - b) ** 2, axis=-1)))


def chamfer(p, q):
    """Symmetric mean nearest-neighbor squared distance."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if not len(p) or not len(q):
        raise ValueError("chamfer distance needs nonempty point sets")
    # the tree only picks the partner; distances are recomputed from coordinates
    _, nn_q = cKDTree(q).query(p)
    _, nn_p = cKDTree(p).query(q)
    d_pq = np.sum((p - q[nn_q]) ** 2, axis=-1)
    d_qp = np.sum((q - p[nn_p]) ** 2, axis=-1)
    return float(np.mean(d_pq) + np.mean(d_qp))


def emd(p, q):
    """Earth mover's distance: mean Euclidean cost of the optimal bijection."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"EMD needs equal-size point sets, got {len(p)} and {len(q)}")
    cost = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def evaluate_pair(out, target):
    return EvalReport(pmd(out, target), chamfer(out, target), emd(out, target))


def batched_edge_loss(out, adjacencies):
    """Mean over the batch of per-sample edge losses; one adjacency per sample."""
    out = ad.as_tensor(out)
    s, n = out.shape[0], out.shape[1]
    if len(adjacencies) != s:
        raise ValueError(f"{len(adjacencies)} adjacencies for a batch of {s}")
    srcs, dsts = [], []
    for k, adj in enumerate(adjacencies):
        src, dst = directed_edges(adj)
        if src.size and max(src.max(), dst.max()) >= n:
            raise IndexError(f"adjacency {k} refers to vertex >= {n}")
        srcs.append(src + k * n)
        dsts.append(dst + k * n)
    flat = ad.reshape(out, (s * n, 3))
    diff = ad.take(flat, np.concatenate(srcs), axis=0) - ad.take(flat, np.concatenate(dsts), axis=0)
    return ad.sum(ad.square(diff)) * (1.0 / s)
