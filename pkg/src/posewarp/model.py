"""The full network: shared feature extractor, OT warping, and refinement."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .correspondence import (SINKHORN_EPS, SINKHORN_ITERS, ExtractorConfig, FeatureExtractor, correlation,
                             sinkhorn_log, warp)
from .layers import Module
from .refinement import RefinementConfig, Refiner


@dataclass(frozen=True)
class ModelConfig:
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    refine: bool = True  # False: the warped mesh is the output

    @classmethod
    def scaled(cls, divisor, **kw):
        """Same topology with every channel width divided by ``divisor``."""
        return cls(ExtractorConfig().scaled(divisor), RefinementConfig().scaled(divisor), **kw)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        ex = d["extractor"]
        rf = d["refinement"]
        return cls(ExtractorConfig(tuple(ex["widths"]), ex["n_resblocks"]),
                   RefinementConfig(rf["stem"], tuple(rf["blocks"]), rf["cond_width"], rf["force_weight"]),
                   d.get("refine", True))


@dataclass
class ForwardResult:
    output: ad.Tensor
    warped: ad.Tensor
    plan: ad.Tensor
    f_id: ad.Tensor
    f_pose: ad.Tensor


class PoseTransferNet(Module):
    def __init__(self, cfg=ModelConfig(), seed=0):
        if cfg.refinement.cond_width != cfg.extractor.out_width:
            raise ValueError("refinement conditioning width must equal the extractor output width")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.extractor = FeatureExtractor(cfg.extractor, rng)
        self.refiner = Refiner(cfg.refinement, rng) if cfg.refine else None

    def named_parameters(self, prefix=""):
        yield from self.extractor.named_parameters(prefix + "extractor.")
        if self.refiner is not None:
            yield from self.refiner.named_parameters(prefix + "refiner.")

    def forward(self, v_id, v_pose, eps=SINKHORN_EPS, i_max=SINKHORN_ITERS):
        """``v_id`` is ``S x N_id x 3``, ``v_pose`` is ``S x N_pose x 3``."""
        f_id = self.extractor(v_id)
        f_pose = self.extractor(v_pose)
        cost = 1.0 - correlation(f_id, f_pose)
        plan = sinkhorn_log(cost, eps, i_max)
        warped = warp(plan, v_pose)
        out = self.refiner(warped, f_id) if self.refiner is not None else warped
        return ForwardResult(out, warped, plan, f_id, f_pose)

    __call__ = forward
