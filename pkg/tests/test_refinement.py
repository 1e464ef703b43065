import numpy as np
import pytest

from posewarp import autodiff as ad
from posewarp.autodiff import Tensor
from posewarp.layers import grad_check, instance_norm
from posewarp.refinement import ElaIN, ElaINResBlock, RefinementConfig, Refiner, refine


def make_elain(width=4, cond=3, seed=0, force_weight=None):
    return ElaIN(width, cond, np.random.default_rng(seed), force_weight)


def inputs(rng, s=2, width=4, cond=3, n=9):
    return rng.normal(size=(s, width, n)), rng.normal(size=(s, cond, n))


def test_elain_weight_zero_is_identity(rng):
    h, f = inputs(rng)
    out = make_elain(force_weight=0.0)(h, f).data
    assert np.allclose(out, h, atol=1e-9)


def test_elain_weight_one_is_pure_modulation(rng):
    h, f = inputs(rng)
    layer = make_elain(force_weight=1.0)
    h_id = layer.conv_id(f)
    gamma, beta = layer.conv_gamma(h_id).data, layer.conv_beta(h_id).data
    xhat = instance_norm(h)[0].data
    assert np.allclose(layer(h, f).data, gamma * xhat + beta, atol=1e-13)


def test_elain_learned_weight_in_unit_interval(rng):
    h, f = inputs(rng)
    layer = make_elain()
    w = layer.blend_weight(Tensor(h), layer.conv_id(f)).data
    assert w.shape == (2, 4, 1)
    assert np.all((w > 0) & (w < 1))


def test_elain_output_is_blend_of_extremes(rng):
    h, f = inputs(rng)
    layer = make_elain()
    w = layer.blend_weight(Tensor(h), layer.conv_id(f)).data
    one = layer(h, f, force_weight=1.0).data
    assert np.allclose(layer(h, f).data, w * one + (1 - w) * h, atol=1e-12)


def test_elain_rejects_mismatched_vertices(rng):
    layer = make_elain()
    with pytest.raises(ValueError):
        layer(rng.normal(size=(1, 4, 9)), rng.normal(size=(1, 3, 8)))


def test_elain_gradient(rng):
    h, f = inputs(rng)
    h, f = Tensor(h, requires_grad=True), Tensor(f, requires_grad=True)
    layer = make_elain()
    r = rng.normal(size=(2, 4, 9))
    assert grad_check(lambda: ad.sum(layer(h, f) * r), [h, f] + layer.parameters()) < 1e-5


def test_elain_resblock_gradient(rng):
    h, f = inputs(rng)
    h, f = Tensor(h, requires_grad=True), Tensor(f, requires_grad=True)
    block = ElaINResBlock(4, 3, np.random.default_rng(1))
    r = rng.normal(size=(2, 4, 9))
    assert grad_check(lambda: ad.sum(block(h, f) * r), [h, f] + block.parameters()) < 1e-5


def test_refiner_layer_widths():
    cfg = RefinementConfig()
    assert cfg.widths() == [1024, 1024, 1024, 512, 512, 256, 256, 3]
    small = RefinementConfig().scaled(32)
    refiner = Refiner(small, np.random.default_rng(0))
    trace = []
    out = refiner(np.zeros((1, 5, 3)), np.ones((1, small.cond_width, 5)), trace=trace)
    assert [t[1] for t in trace] == small.widths()
    assert out.shape == (1, 5, 3)


def test_refine_single_mesh(rng):
    cfg = RefinementConfig().scaled(64)
    refiner = Refiner(cfg, np.random.default_rng(0))
    out = refine(rng.normal(size=(6, 3)), rng.normal(size=(cfg.cond_width, 6)), refiner)
    assert out.shape == (6, 3) and np.isfinite(out).all()


def test_refiner_vertex_equivariance(rng):
    cfg = RefinementConfig().scaled(64)
    refiner = Refiner(cfg, np.random.default_rng(0))
    v, f = rng.normal(size=(10, 3)), rng.normal(size=(cfg.cond_width, 10))
    perm = rng.permutation(10)
    assert np.allclose(refine(v[perm], f[:, perm], refiner), refine(v, f, refiner)[perm], atol=1e-12)
