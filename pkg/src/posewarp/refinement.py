"""Warped-mesh refinement with elastic instance normalization blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import Dense, Linear, Module, instance_norm, leaky_relu


@dataclass(frozen=True)
class RefinementConfig:
    stem: int = 1024
    blocks: tuple = (1024, 512, 256)
    cond_width: int = 256
    # None: learned blend; 0.0 / 1.0 force the weight (1.0 is the SPAdaIN-style ablation)
    force_weight: float | None = None

    def scaled(self, factor):
        return RefinementConfig(max(1, self.stem // factor),
                                tuple(max(1, w // factor) for w in self.blocks),
                                max(1, self.cond_width // factor), self.force_weight)

    def widths(self):
        """Output width of every layer in stack order, ending with the 3 coordinates."""
        out = [self.stem, self.blocks[0]]
        for i, w in enumerate(self.blocks):
            out.append(w)
            out.append(self.blocks[i + 1] if i + 1 < len(self.blocks) else 3)
        return out


class ElaIN(Module):
    """Instance norm whose affine parameters blend the input's own statistics
    with scale/shift predicted from identity features.

    ``gamma' = w*gamma + (1-w)*sigma`` and ``beta' = w*beta + (1-w)*mu``, where
    ``w = sigmoid(fc([mean(h_warp), mean(h_id)]))`` is per sample and channel.
    """

    def __init__(self, width, cond_width, rng, force_weight=None):
        self.conv_id = Linear(cond_width, width, rng)
        self.conv_gamma = Linear(width, width, rng)
        self.conv_beta = Linear(width, width, rng)
        self.fc_blend = Dense(2 * width, width, rng)
        self.force_weight = force_weight

    def blend_weight(self, h_warp, h_id):
        pooled = ad.concat([ad.mean(h_warp, axis=2), ad.mean(h_id, axis=2)], axis=1)
        w = ad.sigmoid(self.fc_blend(pooled))
        return ad.reshape(w, w.shape + (1,))

    def __call__(self, h_warp, f_id, force_weight=None):
        h_warp, f_id = ad.as_tensor(h_warp), ad.as_tensor(f_id)
        if f_id.shape[0] != h_warp.shape[0] or f_id.shape[2] != h_warp.shape[2]:
            raise ValueError(f"identity features {f_id.shape} do not match warped features {h_warp.shape}")
        normalized, mu, sigma = instance_norm(h_warp)
        h_id = self.conv_id(f_id)
        gamma = self.conv_gamma(h_id)
        beta = self.conv_beta(h_id)
        if force_weight is None:
            force_weight = self.force_weight
        if force_weight is None:
            w = self.blend_weight(h_warp, h_id)
        else:
            w = np.full(mu.shape, float(force_weight))
        return ad.modulate(normalized, gamma, beta, w, mu, sigma)


class ElaINResBlock(Module):
    """``h + conv(LeakyReLU(ElaIN(h, f_id)))``."""

    def __init__(self, width, cond_width, rng, force_weight=None):
        self.norm = ElaIN(width, cond_width, rng, force_weight)
        self.conv = Linear(width, width, rng)

    def __call__(self, h, f_id):
        return h + self.conv(leaky_relu(self.norm(h, f_id)))


class Refiner(Module):
    """Stem convs, then alternating ElaIN residual blocks and width-changing convs."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        # the first layer is per-vertex: vertex order carries no spatial meaning
        self.stem = [Linear(3, cfg.stem, rng), Linear(cfg.stem, cfg.blocks[0], rng)]
        self.resblocks = []
        self.transitions = []
        for i, w in enumerate(cfg.blocks):
            nxt = cfg.blocks[i + 1] if i + 1 < len(cfg.blocks) else 3
            self.resblocks.append(ElaINResBlock(w, cfg.cond_width, rng, cfg.force_weight))
            self.transitions.append(Linear(w, nxt, rng))

    def __call__(self, warped, f_id, trace=None):
        """``warped`` is ``S x N x 3``; ``f_id`` is ``S x D_id x N``; returns ``S x N x 3``."""
        x = ad.swapaxes(ad.as_tensor(warped), 1, 2)
        for conv in self.stem:
            x = leaky_relu(conv(x))
            if trace is not None:
                trace.append(x.shape)
        last = len(self.resblocks) - 1
        for i, (block, conv) in enumerate(zip(self.resblocks, self.transitions)):
            x = block(x, f_id)
            if trace is not None:
                trace.append(x.shape)
            x = conv(x)
            if i < last:
                x = leaky_relu(x)
            if trace is not None:
                trace.append(x.shape)
        return ad.swapaxes(x, 1, 2)


def refine(warped_vertices, f_id, refiner):
    """Single-mesh convenience wrapper: ``N x 3`` and ``D x N`` arrays in, ``N x 3`` out."""
    out = refiner(ad.as_tensor(warped_vertices).data[None], ad.as_tensor(f_id).data[None])
    return out.data[0]
