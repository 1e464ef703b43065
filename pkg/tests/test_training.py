import csv
import os

import numpy as np
import pytest

from posewarp.checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from posewarp.dataset import ManifestEntry, build_mesh, sample_pairs, write_dataset
from posewarp.layers import NonFiniteGradient
from posewarp.mesh import Mesh, shuffle_vertices
from posewarp.metrics import evaluate_pair
from posewarp.model import ModelConfig, PoseTransferNet
from posewarp.training import (TrainConfig, TrainingPair, as_training_pairs, evaluate, learning_rate,
                               train, transfer, write_eval_csv)

SMALL = dict(width_divisor=16, batch_size=2)


@pytest.fixture(scope="module")
def pairs():
    return sample_pairs(3, 3, 4, seed=2)


@pytest.fixture(scope="module")
def small_model():
    return PoseTransferNet(ModelConfig.scaled(16), seed=0)


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert learning_rate(cfg, 1) == 1e-4
    assert learning_rate(cfg, 100) == 1e-4
    assert learning_rate(cfg, 101) == pytest.approx(1e-4 - 1e-6, rel=1e-12)
    # read literally epoch 200 would reach 0; the floor keeps it positive
    assert learning_rate(cfg, 200) == 1e-8
    assert all(learning_rate(cfg, e) > 0 for e in range(1, 201))


def test_stretched_schedule():
    cfg = TrainConfig().stretched(500)
    assert cfg.epochs == 500 and cfg.lr_fixed_epochs == 250
    assert learning_rate(cfg, 250) == 1e-4
    assert learning_rate(cfg, 499) == pytest.approx(4e-7, rel=1e-9)
    assert learning_rate(cfg, 500) == 1e-8


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3, "bogus": 1})
    assert TrainConfig.from_dict({"epochs": 3}).epochs == 3


def test_one_step_moves_every_stage(pairs):
    cfg = TrainConfig(epochs=1, **SMALL)
    model = PoseTransferNet(cfg.model_config(), seed=0)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    train(cfg, pairs[:1], model=model)
    changed = {n for n, p in model.named_parameters() if not np.array_equal(p.data, before[n])}
    n_blocks = len(model.refiner.resblocks)
    prefixes = (["extractor.layers.", "extractor.resblocks.", "extractor.head."]
                + [f"refiner.resblocks.{i}." for i in range(n_blocks)]
                + [f"refiner.transitions.{n_blocks - 1}."])
    for prefix in prefixes:
        assert any(n.startswith(prefix) for n in changed), prefix


def test_training_reduces_loss(pairs):
    result = train(TrainConfig(epochs=15, lr=1e-3, **SMALL), pairs)
    hist = result.history
    assert len(hist) == 15 and all(np.isfinite(h["total"]) for h in hist)
    assert hist[-1]["rec"] < 0.5 * hist[0]["rec"]


def test_checkpoint_cadence_and_determinism(pairs, tmp_path):
    paths = []
    for run in ("a", "b"):
        cfg = TrainConfig(epochs=3, checkpoint_every=2, checkpoint_dir=str(tmp_path / run), seed=4, **SMALL)
        paths.append(train(cfg, pairs).checkpoints)
    assert [os.path.basename(p) for p in paths[0]] == ["epoch_0002.ckpt", "epoch_0003.ckpt"]
    for a, b in zip(*paths):
        assert open(a, "rb").read() == open(b, "rb").read()
    header, _ = read_header(paths[0][-1])
    assert header["epoch"] == 3 and len(header["loss_history"]) == 3
    assert header["train_config"]["seed"] == 4


def test_different_seed_changes_checkpoint(pairs, tmp_path):
    out = []
    for seed in (0, 1):
        cfg = TrainConfig(epochs=1, checkpoint_dir=str(tmp_path / str(seed)), seed=seed, **SMALL)
        out.append(open(train(cfg, pairs).checkpoints[-1], "rb").read())
    assert out[0] != out[1]


def test_checkpoint_round_trip(small_model, tmp_path, pairs):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, small_model, {"epoch": 0})
    model, header = load_checkpoint(path)
    assert header["epoch"] == 0
    for (n, p), (m, q) in zip(small_model.named_parameters(), model.named_parameters()):
        assert n == m and np.array_equal(p.data, q.data)
    s = pairs[0]
    a, _, _ = transfer(s.mesh_id, s.mesh_pose, small_model)
    b, _, _ = transfer(s.mesh_id, s.mesh_pose, model)
    assert np.array_equal(a.vertices, b.vertices)


def test_checkpoint_mismatch_rejected(small_model, tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_checkpoint(path, small_model, {})
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    open(path, "wb").write(b"not a checkpoint\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_transfer_differing_vertex_counts(small_model):
    m_id = build_mesh()
    pose = Mesh(shuffle_vertices(build_mesh(), 1)[0].vertices[:290])
    out, plan, warped = transfer(m_id, pose, small_model)
    assert out.n_vertices == 386 and np.array_equal(out.faces, m_id.faces)
    assert np.array_equal(warped.faces, m_id.faces)
    assert plan.plan.shape == (386, 290)
    assert np.abs(plan.plan.sum(axis=1) - 1 / 386).max() <= 1e-12


def test_transfer_rejects_empty(small_model):
    with pytest.raises(ValueError):
        transfer(Mesh(np.zeros((0, 3))), build_mesh(), small_model)


def test_non_finite_loss_names_samples(pairs):
    bad = TrainingPair("broken", pairs[0].mesh_id, pairs[0].mesh_pose,
                       pairs[0].mesh_gt.with_vertices(np.full((386, 3), np.nan)))
    with pytest.raises(FloatingPointError, match="broken") as info:
        train(TrainConfig(epochs=1, **SMALL), [bad])
    assert not isinstance(info.value, NonFiniteGradient)


def test_train_from_manifest(pairs, tmp_path):
    write_dataset(pairs, str(tmp_path), {})
    result = train(TrainConfig(epochs=1, manifest=str(tmp_path / "manifest.json"), **SMALL))
    assert len(result.history) == 1


def test_evaluate_and_csv(small_model, pairs, tmp_path):
    rows = evaluate(small_model, pairs)
    assert [r.pair_id for r in rows] == [p.sample_id for p in pairs]
    path = str(tmp_path / "eval.csv")
    write_eval_csv(rows, path)
    lines = open(path).read().splitlines()
    assert lines[0].startswith("#")
    table = list(csv.reader(lines[1:]))
    assert table[0] == ["pair_id", "pmd", "cd", "emd"] and table[-1][0] == "mean"
    assert float(table[1][1]) == pytest.approx(rows[0].pmd * 1e3, rel=1e-5)
    no_gt = ManifestEntry("x", pairs[0].mesh_id, pairs[0].mesh_pose, None)
    with pytest.raises(ValueError, match="no ground truth"):
        evaluate(small_model, [no_gt])


def test_ground_truth_against_itself_is_zero(pairs):
    rep = evaluate_pair(pairs[0].mesh_gt.vertices, pairs[0].mesh_gt.vertices)
    assert (rep.pmd, rep.cd, rep.emd) == (0.0, 0.0, 0.0)


def test_as_training_pairs_builds_adjacency(pairs):
    tp = as_training_pairs(pairs)
    assert len(tp[0].adjacency) == 386
