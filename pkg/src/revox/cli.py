"""Command-line front end: fit a toy scene, compress, evaluate, inspect.

Exit codes are a stable contract: 0 on success, 1 on runtime failure
(missing/corrupt model, impossible stop criterion), 2 on usage or config
errors (bad flags, malformed JSON, unknown keys, out-of-range indices).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import codec
from .config import ConfigError, RunConfig, SceneConfig, load_config
from .grid import Layer, ParameterStore
from .pipeline import Checkpoint, compress, history_csv
from .render import CameraSet, RadianceModel, render_image
from .scene import make_synthetic_scene, split_cameras, init_model
from .train import Adam, evaluate, fit

__all__ = ["main", "build_parser", "layer_histogram", "inspect_report"]

HISTOGRAM_BINS = 32


class UsageError(Exception):
    """Bad invocation that should print usage and exit 2."""


def _meta_path(model_path: Path) -> Path:
    return model_path.with_name(model_path.stem + ".meta.json")


def _write_meta(model_path: Path, cfg: RunConfig) -> None:
    meta = {"seed": cfg.seed, "scene": dataclasses.asdict(cfg.scene)}
    _meta_path(model_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _resolve_meta(model_path: Path, cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Reconcile the run config with the model's recorded scene.

    Without an explicit --config/--seed the sidecar wins, so a bare
    `eval`/`render`/`compress` rebuilds the cameras the model was fit
    against. An explicit choice is honored but warned about on mismatch.
    """
    path = _meta_path(model_path)
    if not path.exists():
        return cfg
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError:
        print(f"warning: unreadable sidecar {path}, skipping scene check", file=sys.stderr)
        return cfg
    explicit = getattr(args, "config", None) is not None or getattr(args, "seed", None) is not None
    if not explicit:
        try:
            return dataclasses.replace(
                cfg, seed=int(meta["seed"]), scene=SceneConfig(**meta["scene"])
            )
        except (KeyError, TypeError, ValueError):
            print(f"warning: malformed sidecar {path}, using defaults", file=sys.stderr)
            return cfg
    current = {"seed": cfg.seed, "scene": dataclasses.asdict(cfg.scene)}
    if meta != current:
        print(
            f"warning: model {model_path.name} was fit against scene {meta}, "
            f"evaluating against {current}",
            file=sys.stderr,
        )
    return cfg


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, Any] = {}
    for attr, dotted in (
        ("seed", "seed"),
        ("gamma", "compress.gamma"),
        ("delta", "compress.delta"),
        ("delta_t", "compress.delta_t_db"),
        ("scope", "compress.scope"),
        ("connectivity", "compress.connectivity"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[dotted] = value
    if getattr(args, "no_reinclude", False):
        overrides["compress.reinclude"] = False
    if getattr(args, "no_quantize", False):
        overrides["compress.quantize"] = False
    config_path = getattr(args, "config", None)
    if config_path is not None and not Path(config_path).is_file():
        raise UsageError(f"config file not found: {config_path}")
    return load_config(config_path, overrides)


def _load_model(model_path: Path) -> RadianceModel:
    store = codec.decode(model_path.read_bytes())
    grid = store["density"].site_shape
    return RadianceModel(store, step_size=1.0 / max(grid))


def _scene_views(cfg: RunConfig) -> tuple[RadianceModel, CameraSet]:
    return make_synthetic_scene(cfg.scene.spec(cfg.seed))


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    _, views = _scene_views(cfg)
    train_cams, val_cams = split_cameras(views)
    model = init_model(cfg.scene.spec(cfg.seed))
    opt = Adam(model.store, lr=cfg.train.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    _, history = fit(model, train_cams, cfg.train.epochs, opt, rng)

    data = codec.encode(model.store, quantize=False)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)
    _write_meta(out, cfg)
    csv_path = out.with_name(out.stem + ".train.csv")
    lines = ["epoch,loss,train_psnr_db"]
    lines += [f"{h.epoch},{h.loss:.8e},{h.train_psnr_db:.4f}" for h in history]
    csv_path.write_text("\n".join(lines) + "\n")

    report = evaluate(_load_model(out), val_cams)
    print(f"wrote {out} ({len(data)} bytes) and {csv_path}")
    print(f"final train PSNR: {history[-1].train_psnr_db:.4f} dB")
    print(f"validation PSNR: {report.psnr_db:.4f} dB")
    print(f"validation SSIM: {report.ssim:.4f}")
    return 0


def _summary_rows(checkpoints: dict[str, Checkpoint], quantize: bool) -> tuple[str, dict[str, bytes]]:
    lines = ["checkpoint,psnr_db,ssim,size_bytes,ratio"]
    payloads = {}
    for name, ckpt in checkpoints.items():
        data = codec.encode(ckpt.store, quantize=quantize)
        stats = codec.report(ckpt.store, data)
        payloads[name] = data
        lines.append(
            f"{name},{ckpt.report.psnr_db:.4f},{ckpt.report.ssim:.4f},{len(data)},{stats.ratio:.3f}"
        )
    return "\n".join(lines) + "\n", payloads


def cmd_compress(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    model_path = Path(args.model)
    model = _load_model(model_path)
    cfg = _resolve_meta(model_path, cfg, args)
    _, views = _scene_views(cfg)
    train_cams, val_cams = split_cameras(views)

    result = compress(model, train_cams, val_cams, cfg.compress.pipeline_config(cfg.seed))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "history.csv").write_text(history_csv(result.history))
    summary, payloads = _summary_rows(
        {"low": result.low, "high": result.high}, cfg.compress.quantize
    )
    (out_dir / "summary.csv").write_text(summary)
    for name, data in payloads.items():
        path = out_dir / f"{name}.rnrf"
        path.write_bytes(data)
        _write_meta(path, cfg)

    print(f"baseline validation PSNR: {result.baseline_psnr_db:.4f} dB")
    print(summary, end="")
    print(f"wrote {out_dir}/low.rnrf, high.rnrf, history.csv, summary.csv")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    model_path = Path(args.model)
    model = _load_model(model_path)
    cfg = _resolve_meta(model_path, cfg, args)
    _, views = _scene_views(cfg)
    _, val_cams = split_cameras(views)
    report = evaluate(model, val_cams)
    size = model_path.stat().st_size
    print(f"PSNR: {report.psnr_db:.4f} dB")
    print(f"SSIM: {report.ssim:.4f}")
    print(f"size: {size} bytes")
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    model_path = Path(args.model)
    store = codec.decode(model_path.read_bytes())
    out = Path(args.out) if args.out else model_path.with_suffix(".rnrd")
    data = codec.encode(store, quantize=False)
    out.write_bytes(data)
    print(f"wrote {out} ({len(data)} bytes, full precision)")
    return 0


def _write_image(img: np.ndarray, path: Path) -> None:
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if path.suffix.lower() == ".ppm":
        header = f"P6\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode()
        path.write_bytes(header + u8.tobytes())
        return
    from PIL import Image

    Image.fromarray(u8, mode="RGB").save(path)


def cmd_render(args: argparse.Namespace) -> int:
    cfg = _load_run_config(args)
    model_path = Path(args.model)
    model = _load_model(model_path)
    cfg = _resolve_meta(model_path, cfg, args)
    _, views = _scene_views(cfg)
    if not (0 <= args.index < len(views)):
        raise UsageError(f"camera index {args.index} out of range [0, {len(views)})")
    img = render_image(model, views.cameras[args.index])
    out = Path(args.out)
    _write_image(img, out)
    print(f"wrote {out} ({img.shape[1]}x{img.shape[0]})")
    return 0


def layer_histogram(layer: Layer, bins: int = HISTOGRAM_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of the layer's kept scalar values."""
    kept = layer.site_values()[layer.flat_mask()].ravel()
    if kept.size == 0:
        return np.zeros(bins, dtype=np.int64), np.linspace(0.0, 1.0, bins + 1)
    lo, hi = float(kept.min()), float(kept.max())
    if lo == hi:
        hi = lo + 1.0
    counts, edges = np.histogram(kept, bins=bins, range=(lo, hi))
    return counts, edges


def inspect_report(store: ParameterStore, data: bytes) -> str:
    stats = codec.report(store, data)
    lines = [
        f"layers: {len(store)}",
        f"encoded: {stats.encoded_bytes} bytes (raw f32 {stats.raw_bytes} bytes, "
        f"ratio {stats.ratio:.3f}x)",
        f"overall sparsity: {stats.sparsity:.4f}",
    ]
    for layer in store:
        kept = layer.kept_count
        occupancy = 100.0 * kept / layer.total_sites
        payload = len(codec._pack_layer(layer, quantize=True))
        kind = "voxel3d" if layer.is_voxel else "dense"
        lines.append(
            f"  {layer.name}: kind={kind} sites={layer.total_sites} "
            f"kept={kept} occupancy={occupancy:.2f}% payload={payload} bytes"
        )
        values = layer.site_values()[layer.flat_mask()].ravel()
        if values.size:
            counts, _ = layer_histogram(layer)
            lines.append(f"    min={values.min():.6g} max={values.max():.6g}")
            lines.append(f"    histogram[{HISTOGRAM_BINS}]: {' '.join(str(c) for c in counts)}")
        else:
            lines.append("    (no kept values)")
    return "\n".join(lines)


def cmd_inspect(args: argparse.Namespace) -> int:
    model_path = Path(args.model)
    data = model_path.read_bytes()
    store = codec.decode(data)
    print(inspect_report(store, data))
    return 0


def _add_config_flags(p: argparse.ArgumentParser, compression: bool = False) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run config (defaults used if omitted)")
    p.add_argument("--seed", type=int, metavar="N", help="override the run seed")
    if compression:
        p.add_argument("--gamma", type=float, metavar="F", help="removal fraction per round")
        p.add_argument("--delta", type=float, metavar="F", help="re-inclusion quantile")
        p.add_argument("--delta-t", type=float, metavar="F", dest="delta_t",
                       help="allowed validation PSNR drop in dB")
        p.add_argument("--scope", choices=["voxels", "all"], help="which layers to prune")
        p.add_argument("--no-reinclude", action="store_true", help="skip re-inclusion")
        p.add_argument("--no-quantize", action="store_true",
                       help="store checkpoints at full precision")
        p.add_argument("--connectivity", type=int, choices=[6, 26],
                       help="voxel neighborhood for re-inclusion")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revox",
        description="Compress voxel radiance fields by iterated importance pruning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train a model on a synthetic scene")
    _add_config_flags(p)
    p.add_argument("--out", default="model.rnrd", metavar="PATH", help="output model file")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compress", help="run the pruning loop on a fitted model")
    p.add_argument("model", help="fitted model container")
    _add_config_flags(p, compression=True)
    p.add_argument("--out", default="compressed", metavar="DIR", help="output directory")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("eval", help="score a model against its scene's validation views")
    p.add_argument("model", help="model container")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="rewrite a container at full precision")
    p.add_argument("model", help="model container")
    p.add_argument("--out", metavar="PATH", help="output path (default: input with .rnrd)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("render", help="render one scene view from a model")
    p.add_argument("model", help="model container")
    p.add_argument("index", type=int, help="camera index")
    _add_config_flags(p)
    p.add_argument("--out", default="view.png", metavar="PATH", help="output image (.png or .ppm)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect", help="print per-layer occupancy and value stats")
    p.add_argument("model", help="model container")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except codec.CodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
