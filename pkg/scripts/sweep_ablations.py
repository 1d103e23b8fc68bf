#!/usr/bin/env python3
"""Sweep the pruning knobs on one fitted scene and print a comparison table.

Three small studies off a single fit:

  * removal fraction gamma, with and without re-inclusion
  * pruning scope (voxel layers only vs all layers) at a high budget
  * 8-bit quantization against full-precision serialization

python3 scripts/sweep_ablations.py [--gammas 0.3,0.5,0.7,0.9] [--epochs 20]
"""

import argparse

import numpy as np

from revox import codec
from revox.grid import NeighborTopology, sparsity
from revox.importance import Scope, layer_normalize, remove, taylor_scores
from revox.pipeline import gradient_snapshot
from revox.reinclude import inclusion_threshold, reinclude
from revox.render import RadianceModel
from revox.scene import SceneSpec, init_model, make_synthetic_scene, split_cameras
from revox.train import Adam, evaluate, fine_tune_one_epoch, fit


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", default="0.3,0.5,0.7,0.9",
                    help="comma-separated removal fractions")
    ap.add_argument("--delta", type=float, default=0.25, help="re-inclusion quantile")
    ap.add_argument("--scope-gamma", type=float, default=0.99,
                    help="removal fraction for the scope study")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args()


def prune_once(model, train_cams, val_cams, grads, gamma, delta, scope, use_reinclude):
    """One removal (+ optional re-inclusion) pass and a healing epoch."""
    work = model.clone()
    scores = layer_normalize(taylor_scores(work.store, grads, scope))
    remove(work.store, scores, gamma)
    n_back = 0
    if use_reinclude:
        t_inc = inclusion_threshold(grads, work.store, delta)
        n_back = reinclude(work.store, grads, t_inc,
                           NeighborTopology.FACE6).re_included_total
    fine_tune_one_epoch(work, train_cams, Adam(work.store), np.random.default_rng(1))
    report = evaluate(work, val_cams)
    return report.psnr_db, sparsity(work.store), n_back


def main() -> None:
    args = parse_args()
    gammas = [float(g) for g in args.gammas.split(",")]

    spec = SceneSpec()
    _, views = make_synthetic_scene(spec)
    train_cams, val_cams = split_cameras(views)
    model = init_model(spec)
    model, hist = fit(model, train_cams, args.epochs,
                      Adam(model.store, lr=args.lr), np.random.default_rng(args.seed))
    baseline = evaluate(model, val_cams)
    print(f"fitted: train {hist[-1].train_psnr_db:.4f} dB, "
          f"val {baseline.psnr_db:.4f} dB\n")
    grads = gradient_snapshot(model, train_cams, seed=args.seed)

    print("-- removal fraction vs re-inclusion (one healing epoch each) --")
    print(f"{'gamma':>6}{'reinclude':>11}{'psnr_db':>10}{'sparsity':>10}{'sites_back':>12}")
    for gamma in gammas:
        for use_reinclude in (False, True):
            psnr, sp, n_back = prune_once(model, train_cams, val_cams, grads,
                                          gamma, args.delta, Scope.VOXELS_ONLY,
                                          use_reinclude)
            flag = "on" if use_reinclude else "off"
            print(f"{gamma:>6.2f}{flag:>11}{psnr:>10.4f}{sp:>10.6f}{n_back:>12}")

    print(f"\n-- pruning scope at gamma={args.scope_gamma} (no healing) --")
    tuned = model.clone()
    fine_tune_one_epoch(tuned, train_cams, Adam(tuned.store), np.random.default_rng(0))
    tuned_grads = gradient_snapshot(tuned, train_cams, seed=args.seed)
    print(f"{'scope':>8}{'psnr_db':>10}{'sparsity':>10}")
    for scope in (Scope.VOXELS_ONLY, Scope.ALL_LAYERS):
        pruned = tuned.clone()
        scores = layer_normalize(taylor_scores(pruned.store, tuned_grads, scope))
        remove(pruned.store, scores, args.scope_gamma)
        report = evaluate(pruned, val_cams)
        print(f"{scope.value:>8}{report.psnr_db:>10.4f}{sparsity(pruned.store):>10.6f}")

    print("\n-- serialization precision --")
    print(f"{'mode':>8}{'psnr_db':>10}{'bytes':>8}")
    for label, quantize in (("f32", False), ("8-bit", True)):
        data = codec.encode(model.store, quantize=quantize)
        decoded = RadianceModel(codec.decode(data), model.step_size)
        report = evaluate(decoded, val_cams)
        print(f"{label:>8}{report.psnr_db:>10.4f}{len(data):>8}")


if __name__ == "__main__":
    main()
