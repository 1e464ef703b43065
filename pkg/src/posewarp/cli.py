"""Command-line entry point: data generation, training, transfer, evaluation and checks."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from .checkpoint import load_checkpoint
from .correspondence import SINKHORN_EPS, SINKHORN_ITERS, sinkhorn
from .dataset import GeneratorConfig, config_dict, make_pools, read_manifest, sample_pairs, split_identities, write_dataset
from .mesh import load_obj, save_obj, save_ply
from .training import TrainConfig, evaluate, summarize, train, transfer, write_eval_csv

log = logging.getLogger("posewarp")


# generate-data


def cmd_generate(args):
    cfg = GeneratorConfig(quadruped=args.quadruped)
    pools = make_pools(args.id_pool, args.pose_pool, args.seed, cfg)
    meta = {"seed": args.seed, "id_pool": args.id_pool, "pose_pool": args.pose_pool,
            "generator": config_dict(cfg)}
    if args.test_identities:
        train_ids, test_ids = split_identities(args.id_pool, args.test_identities, args.seed)
        for sub, ids, n in (("train", train_ids, args.n), ("test", test_ids, args.n_test)):
            samples = sample_pairs(n, args.id_pool, args.pose_pool, args.seed + (sub == "test"),
                                   cfg, identity_ids=ids, pools=pools)
            path = write_dataset(samples, os.path.join(args.out, sub), dict(meta, split=sub, identities=ids))
            print(f"{sub}: {len(samples)} pairs -> {path}")
    else:
        samples = sample_pairs(args.n, args.id_pool, args.pose_pool, args.seed, cfg, pools=pools)
        print(f"{len(samples)} pairs -> {write_dataset(samples, args.out, meta)}")
    return 0


# train


_TRAIN_FLAGS = ("epochs", "batch_size", "lr", "lambda_rec", "eps", "i_max", "seed", "manifest", "checkpoint_dir",
                "checkpoint_every", "width_divisor", "force_weight")


def train_config_from_args(args):
    """Config file values first, then any flag given on the command line."""
    values = {}
    if args.config:
        with open(args.config) as fh:
            values.update(json.load(fh))
    for name in _TRAIN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if args.no_refine:
        values["refine"] = False
    cfg = TrainConfig.from_dict(values)
    if args.stretch:
        cfg = TrainConfig.from_dict({**asdict(cfg), "epochs": TrainConfig.epochs}).stretched(cfg.epochs)
    return cfg


def cmd_train(args):
    cfg = train_config_from_args(args)
    if not cfg.manifest:
        raise SystemExit("train: a manifest is required (--manifest or config file)")
    if not cfg.checkpoint_dir:
        raise SystemExit("train: a checkpoint directory is required (--checkpoint-dir or config file)")
    result = train(cfg, on_epoch=lambda e, _: print(
        f"epoch {e['epoch']:4d}  lr {e['lr']:.3g}  rec {e['rec']:.6g}  edge {e['edge']:.6g}", flush=True))
    report = args.report or cfg.checkpoint_dir
    os.makedirs(report, exist_ok=True)
    hist_path = os.path.join(report, "loss_history.csv")
    with open(hist_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "lr", "rec", "edge", "total"])
        w.writeheader()
        w.writerows(result.history)
    from .plotting import plot_loss_curve
    fig = plot_loss_curve(result.history, os.path.join(report, "loss_curve.png"))
    print(f"checkpoints: {', '.join(result.checkpoints)}")
    print(f"history: {hist_path}\nfigure: {fig}")
    return 0


# transfer


def position_colors(vertices):
    """Deterministic position-to-RGB map: bounding box normalized to [0, 255] per axis."""
    v = np.asarray(vertices, dtype=np.float64)
    lo, hi = v.min(axis=0), v.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.rint((v - lo) / span * 255).astype(np.uint8)


def cmd_transfer(args):
    model, _ = load_checkpoint(args.checkpoint)
    m_id, m_pose = load_obj(args.identity), load_obj(args.pose)
    out, plan, warped = transfer(m_id, m_pose, model, args.eps, args.i_max)
    save_obj(out, args.out)
    print(f"output: {args.out} ({out.n_vertices} vertices)")
    if args.warped:
        save_obj(warped, args.warped)
        print(f"warped: {args.warped}")
    if args.ply:
        matched = plan.plan.argmax(axis=1)
        save_ply(m_id, args.ply, position_colors(m_pose.vertices)[matched])
        save_ply(m_pose, os.path.splitext(args.ply)[0] + "_pose.ply", position_colors(m_pose.vertices))
        print(f"correspondence: {args.ply}")
    return 0


# eval


def cmd_eval(args):
    model, _ = load_checkpoint(args.checkpoint)
    entries, _ = read_manifest(args.manifest)
    rows = evaluate(model, entries, args.eps, args.i_max, use_warped=args.warped_only)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_eval_csv(rows, args.out)
    from .plotting import plot_eval
    fig = plot_eval(rows, os.path.splitext(args.out)[0] + ".png")
    mean = summarize(rows)
    print(f"pairs {len(rows)}  PMD {mean.pmd * 1e3:.4g}e-3  CD {mean.cd * 1e3:.4g}e-3  EMD {mean.emd * 1e2:.4g}e-2")
    print(f"table: {args.out}\nfigure: {fig}")
    return 0


# gradcheck


def cmd_gradcheck(args):
    from .gradsuite import run_suite
    results = run_suite(seed=args.seed, h=args.step)
    print("case,params,max_rel_error,tol,status")
    for r in results:
        print(f"{r.name},{r.n_params},{r.max_rel_error:.3e},{r.tol:g},{'PASS' if r.passed else 'FAIL'}")
    return 0 if all(r.passed for r in results) else 1


# sinkhorn


def _read_matrix(path):
    with open(path) as fh:
        text = fh.read()
    delimiter = "\t" if "\t" in text else ","
    rows = [r for r in csv.reader(text.splitlines(), delimiter=delimiter) if r and not r[0].startswith("#")]
    try:
        return np.array([[float(x) for x in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise SystemExit(f"sinkhorn: {path}: {exc}") from None


def cmd_sinkhorn(args):
    cost = _read_matrix(args.cost)
    if cost.ndim != 2 or not cost.size:
        raise SystemExit("sinkhorn: cost must be a nonempty rectangular table")
    result = sinkhorn(cost, args.eps, args.i_max, track=True)
    np.savetxt(args.out, result.plan, delimiter=",", fmt="%.17g")
    print(f"plan {result.plan.shape[0]}x{result.plan.shape[1]}: {args.out}")
    print(f"row error {result.row_error:.3e}  column L1 error {result.col_error:.3e}")
    if args.figure:
        from .plotting import plot_sinkhorn
        print(f"figure: {plot_sinkhorn(result.plan, result.col_errors, args.figure)}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="posewarp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write synthetic (identity, pose, ground truth) triples")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=40, help="training pairs")
    g.add_argument("--n-test", type=int, default=10, help="test pairs when --test-identities is set")
    g.add_argument("--id-pool", type=int, default=16)
    g.add_argument("--pose-pool", type=int, default=32)
    g.add_argument("--test-identities", type=int, default=0,
                   help="hold out this many identities; writes train/ and test/ subdirectories")
    g.add_argument("--quadruped", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit the network on a manifest")
    t.add_argument("--config", help="JSON file with training config fields")
    t.add_argument("--manifest")
    t.add_argument("--checkpoint-dir")
    t.add_argument("--report", help="directory for loss_history.csv and loss_curve.png")
    for name, typ in (("epochs", int), ("batch_size", int), ("lr", float), ("lambda_rec", float),
                      ("eps", float), ("i_max", int), ("checkpoint_every", int), ("width_divisor", int),
                      ("force_weight", float)):
        t.add_argument("--" + name.replace("_", "-"), type=typ)
    t.add_argument("--stretch", action="store_true",
                   help="rescale the default schedule to --epochs (fixed half, then decay to the floor)")
    t.add_argument("--no-refine", action="store_true", help="train the warp-only variant")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    x = sub.add_parser("transfer", help="pose an identity mesh like a pose mesh")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--identity", required=True)
    x.add_argument("--pose", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--warped", help="also write the coarse warped mesh")
    x.add_argument("--ply", help="write a colored correspondence PLY")
    x.add_argument("--eps", type=float, default=SINKHORN_EPS)
    x.add_argument("--i-max", type=int, default=SINKHORN_ITERS)
    x.add_argument("--seed", type=int, default=0, help="accepted for uniformity; transfer is deterministic")
    x.set_defaults(func=cmd_transfer)

    e = sub.add_parser("eval", help="PMD/CD/EMD on every pair of a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True, help="CSV path; a bar chart is written next to it")
    e.add_argument("--eps", type=float, default=SINKHORN_EPS)
    e.add_argument("--i-max", type=int, default=SINKHORN_ITERS)
    e.add_argument("--warped-only", action="store_true", help="score the warped mesh instead of the output")
    e.add_argument("--seed", type=int, default=0, help="accepted for uniformity; evaluation is deterministic")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every differentiable block")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--step", type=float, default=1e-6)
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sinkhorn", help="transport plan for a cost table (CSV or TSV)")
    s.add_argument("--cost", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--eps", type=float, default=SINKHORN_EPS)
    s.add_argument("--i-max", type=int, default=SINKHORN_ITERS)
    s.add_argument("--figure", help="write plan heatmap and convergence plot")
    s.add_argument("--seed", type=int, default=0, help="accepted for uniformity; the solver is deterministic")
    s.set_defaults(func=cmd_sinkhorn)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"posewarp {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
