#!/usr/bin/env python3
"""Fit a synthetic scene, compress it, and print the size/quality table.

Reproduces the numbers recorded in README.md and tests/baselines.json:

    python3 scripts/toy_benchmark.py
    python3 scripts/toy_benchmark.py --shape cube --gamma 0.7 --out run/
"""

import argparse
import time
from pathlib import Path

import numpy as np

from revox import codec
from revox.pipeline import CompressionConfig, compress, history_csv
from revox.scene import SceneSpec, init_model, make_synthetic_scene, split_cameras
from revox.train import Adam, fit


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shape", default="sphere", choices=["sphere", "cube", "two_spheres"])
    ap.add_argument("--grid-n", type=int, default=16)
    ap.add_argument("--views", type=int, default=10)
    ap.add_argument("--resolution", type=int, default=48)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--gamma", type=float, default=0.5, help="removal fraction per round")
    ap.add_argument("--delta", type=float, default=0.5, help="re-inclusion quantile")
    ap.add_argument("--delta-t", type=float, default=1.0, help="allowed PSNR drop (dB)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", metavar="DIR", help="also write containers + history there")
    return ap.parse_args()


def main() -> None:
    args = parse_args()
    spec = SceneSpec(shape=args.shape, grid_n=args.grid_n,
                     n_views=args.views, resolution=args.resolution)
    _, views = make_synthetic_scene(spec)
    train_cams, val_cams = split_cameras(views)

    t0 = time.perf_counter()
    model = init_model(spec)
    model, hist = fit(model, train_cams, args.epochs, Adam(model.store, lr=args.lr),
                      np.random.default_rng(args.seed))
    fit_s = time.perf_counter() - t0
    print(f"fit: {args.epochs} epochs in {fit_s:.1f}s, "
          f"final train PSNR {hist[-1].train_psnr_db:.4f} dB")

    cfg = CompressionConfig(gamma=args.gamma, delta=args.delta,
                            delta_t_db=args.delta_t, seed=args.seed)
    t0 = time.perf_counter()
    result = compress(model.clone(), train_cams, val_cams, cfg)
    comp_s = time.perf_counter() - t0

    raw = 4 * model.store.total_scalars
    print(f"compress: {len(result.history)} rounds in {comp_s:.1f}s, "
          f"baseline {result.baseline_psnr_db:.4f} dB, raw f32 {raw} B")
    print()
    print(f"{'checkpoint':<12}{'round':>6}{'psnr_db':>10}{'ssim':>8}"
          f"{'size_B':>8}{'ratio':>8}{'sparsity':>10}")
    for name, ckpt in (("low", result.low), ("high", result.high)):
        print(f"{name:<12}{ckpt.round_index:>6}{ckpt.report.psnr_db:>10.4f}"
              f"{ckpt.report.ssim:>8.4f}{ckpt.size_bytes:>8}"
              f"{raw / ckpt.size_bytes:>8.3f}{ckpt.sparsity:>10.6f}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "low.rnrf").write_bytes(codec.encode(result.low.store, quantize=cfg.quantize_enabled))
        (out / "high.rnrf").write_bytes(codec.encode(result.high.store, quantize=cfg.quantize_enabled))
        (out / "history.csv").write_text(history_csv(result.history))
        print(f"\nwrote low.rnrf / high.rnrf / history.csv to {out}/")


if __name__ == "__main__":
    main()
