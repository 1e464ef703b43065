"""Training, inference and evaluation."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .checkpoint import save_checkpoint
from .correspondence import SINKHORN_EPS, SINKHORN_ITERS, TransportPlan, build_warped_mesh
from .layers import AdamState, NonFiniteGradient, adam_step
from .mesh import Mesh, vertex_neighbors
from .metrics import LAMBDA_REC, batched_edge_loss, evaluate_pair, loss_report, rec_loss, total_loss
from .model import ModelConfig, PoseTransferNet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Training hyperparameters.

    The learning rate is held at ``lr`` for the first ``lr_fixed_epochs``
    epochs, then drops by ``lr_decay`` per epoch.  Taken literally that reaches
    zero at epoch 200, so it is floored at ``lr_floor``.
    """
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-4
    lr_fixed_epochs: int = 100
    lr_decay: float = 1e-6
    lr_floor: float = 1e-8
    lambda_rec: float = LAMBDA_REC
    eps: float = SINKHORN_EPS
    i_max: int = SINKHORN_ITERS
    seed: int = 0
    manifest: str | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 25
    width_divisor: int = 1
    force_weight: float | None = None
    refine: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "lambda_rec", "eps", "i_max", "lr_floor", "width_divisor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def stretched(self, epochs):
        """Same schedule shape over a different run length (fixed half, then linear decay to the floor)."""
        fixed = epochs * self.lr_fixed_epochs // self.epochs
        decay = self.lr / max(epochs - fixed, 1)
        return replace(self, epochs=epochs, lr_fixed_epochs=fixed, lr_decay=decay)

    def model_config(self):
        cfg = ModelConfig.scaled(self.width_divisor, refine=self.refine)
        if self.force_weight is not None:
            cfg = replace(cfg, refinement=replace(cfg.refinement, force_weight=self.force_weight))
        return cfg

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def learning_rate(cfg, epoch):
    """Learning rate for 1-based ``epoch``."""
    if epoch <= cfg.lr_fixed_epochs:
        return cfg.lr
    return max(cfg.lr - (epoch - cfg.lr_fixed_epochs) * cfg.lr_decay, cfg.lr_floor)


@dataclass
class TrainingPair:
    sample_id: str
    mesh_id: Mesh
    mesh_pose: Mesh
    mesh_gt: Mesh
    adjacency: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.mesh_gt.n_vertices != self.mesh_id.n_vertices:
            raise ValueError(f"sample {self.sample_id}: ground truth and identity differ in vertex count")
        if self.adjacency is None:
            self.adjacency = vertex_neighbors(self.mesh_id)


def as_training_pairs(samples):
    """Accept dataset ``PairSample``/``ManifestEntry`` objects."""
    return [s if isinstance(s, TrainingPair) else
            TrainingPair(s.sample_id, s.mesh_id, s.mesh_pose, s.mesh_gt) for s in samples]


@dataclass
class TrainResult:
    model: PoseTransferNet
    history: list
    optimizer: AdamState
    checkpoints: list


def _batches(pairs, order, batch_size):
    for start in range(0, len(order), batch_size):
        batch = [pairs[i] for i in order[start:start + batch_size]]
        groups = {}
        for p in batch:
            groups.setdefault((p.mesh_id.n_vertices, p.mesh_pose.n_vertices), []).append(p)
        yield batch, list(groups.values())


def _stack(meshes):
    return np.stack([m.vertices for m in meshes])


def batch_loss(model, group, cfg):
    """Forward one same-shape group; returns (total Tensor, rec Tensor, edge Tensor)."""
    res = model(_stack([p.mesh_id for p in group]), _stack([p.mesh_pose for p in group]), cfg.eps, cfg.i_max)
    rec = rec_loss(res.output, _stack([p.mesh_gt for p in group]))
    edge = batched_edge_loss(res.output, [p.adjacency for p in group])
    return total_loss(rec, edge, cfg.lambda_rec), rec, edge


def train_step(model, batch_groups, cfg, opt, named=None):
    """One optimizer step over a batch split into same-shape groups."""
    named = named or list(model.named_parameters())
    model.zero_grad()
    n = sum(len(g) for g in batch_groups)
    rec_sum = edge_sum = 0.0
    for group in batch_groups:
        total, rec, edge = batch_loss(model, group, cfg)
        if not (np.isfinite(total.data) and np.isfinite(rec.data) and np.isfinite(edge.data)):
            raise FloatingPointError("non-finite loss for samples " + ", ".join(p.sample_id for p in group))
        (total * (len(group) / n)).backward()
        rec_sum += float(rec.data) * len(group)
        edge_sum += float(edge.data) * len(group)
    try:
        adam_step(named, opt)
    except NonFiniteGradient as exc:
        ids = ", ".join(p.sample_id for g in batch_groups for p in g)
        raise NonFiniteGradient(f"{exc} (samples {ids})") from None
    return loss_report(rec_sum / n, edge_sum / n, cfg.lambda_rec)


def train(cfg, pairs=None, model=None, on_epoch=None):
    """Fit the network; ``pairs`` defaults to the samples listed in ``cfg.manifest``."""
    if pairs is None:
        if not cfg.manifest:
            raise ValueError("no training pairs and no manifest given")
        from .dataset import read_manifest
        entries, _ = read_manifest(cfg.manifest)
        pairs = entries
    pairs = as_training_pairs(pairs)
    if model is None:
        model = PoseTransferNet(cfg.model_config(), seed=cfg.seed)
    named = list(model.named_parameters())
    opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    history, written = [], []
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = learning_rate(cfg, epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(pairs))
        reports = []
        for batch, groups in _batches(pairs, order, cfg.batch_size):
            reports.append((train_step(model, groups, cfg, opt, named), len(batch)))
        w = np.array([k for _, k in reports], dtype=np.float64)
        rec = float(np.dot([r.rec for r, _ in reports], w) / w.sum())
        edge = float(np.dot([r.edge for r, _ in reports], w) / w.sum())
        entry = {"epoch": epoch, "lr": opt.lr, "rec": rec, "edge": edge, "total": cfg.lambda_rec * rec + edge}
        history.append(entry)
        log.info("epoch %d lr %.3g rec %.6g edge %.6g", epoch, opt.lr, rec, edge)
        if on_epoch is not None:
            on_epoch(entry, model)
        if cfg.checkpoint_dir and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
            os.makedirs(cfg.checkpoint_dir, exist_ok=True)
            path = os.path.join(cfg.checkpoint_dir, f"epoch_{epoch:04d}.ckpt")
            save_checkpoint(path, model, checkpoint_meta(cfg, epoch, history, opt))
            written.append(path)
    return TrainResult(model, history, opt, written)


def checkpoint_meta(cfg, epoch, history, opt):
    # the output directory is a location, not a setting; leaving it out keeps runs byte-identical
    stored = {k: v for k, v in asdict(cfg).items() if k != "checkpoint_dir"}
    return {"train_config": stored, "seed": cfg.seed, "epoch": epoch, "loss_history": history,
            "optimizer": {"name": "adam", "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t}}


def transfer(mesh_id, mesh_pose, model, eps=SINKHORN_EPS, i_max=SINKHORN_ITERS):
    """Pose ``mesh_id`` like ``mesh_pose``; returns ``(output, plan, warped)``.

    The output and warped meshes reuse the identity mesh's faces and vertex order.
    """
    if not mesh_id.n_vertices or not mesh_pose.n_vertices:
        raise ValueError("transfer needs nonempty meshes")
    res = model(mesh_id.vertices[None], mesh_pose.vertices[None], eps, i_max)
    plan = TransportPlan(res.plan.data[0], eps, i_max)
    warped = build_warped_mesh(res.warped.data[0], mesh_id)
    out = Mesh(res.output.data[0], mesh_id.faces, f"{mesh_id.name}_out" if mesh_id.name else "output")
    return out, plan, warped


@dataclass
class PairEval:
    pair_id: str
    pmd: float
    cd: float
    emd: float


def evaluate(model, samples, eps=SINKHORN_EPS, i_max=SINKHORN_ITERS, use_warped=False):
    """Per-pair PMD/CD/EMD (model units, unscaled) against each sample's ground truth."""
    rows = []
    for s in samples:
        if s.mesh_gt is None:
            raise ValueError(f"sample {s.sample_id} has no ground truth")
        out, _, warped = transfer(s.mesh_id, s.mesh_pose, model, eps, i_max)
        r = evaluate_pair((warped if use_warped else out).vertices, s.mesh_gt.vertices)
        rows.append(PairEval(s.sample_id, r.pmd, r.cd, r.emd))
    return rows


def summarize(rows):
    return PairEval("mean", *(float(np.mean([getattr(r, k) for r in rows])) for k in ("pmd", "cd", "emd")))


def write_eval_csv(rows, path):
    """CSV with PMD and CD in units of 1e-3 and EMD in units of 1e-2, plus a mean row."""
    with open(path, "w", newline="") as fh:
        fh.write("# pmd: mean squared per-vertex distance x1e3; cd: chamfer (squared) x1e3; "
                 "emd: mean matched distance x1e2\n")
        w = csv.writer(fh)
        w.writerow(["pair_id", "pmd", "cd", "emd"])
        for r in rows + [summarize(rows)]:
            w.writerow([r.pair_id, f"{r.pmd * 1e3:.6g}", f"{r.cd * 1e3:.6g}", f"{r.emd * 1e2:.6g}"])
