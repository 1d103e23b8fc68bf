"""Iterated compression: fine-tune, score, remove, re-include, evaluate.

Each round runs one fine-tuning epoch, snapshots gradients on a fixed ray
minibatch, masks out the lowest-importance fraction gamma of surviving
sites, then re-admits removed sites whose gradients clear the inclusion
threshold and that touch the kept set. Rounds stop when validation PSNR
falls more than delta_t_db below the pre-compression baseline (that
round's state is discarded) or after max_rounds.

Two checkpoints come back: ``high`` is the last state inside the PSNR
budget (smallest file), ``low`` is the state with the best validation
PSNR. Round quality is measured on serialization round-tripped parameters,
so a saved checkpoint scores exactly what was evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import codec
from .grid import NeighborTopology, ParameterStore, sparsity
from .importance import Scope, layer_normalize, remove, taylor_scores
from .metrics import QualityReport
from .reinclude import inclusion_threshold, reinclude, reinclude_dense
from .render import CameraSet, GradientBuffer, RadianceModel, backward_rays
from .train import Adam, evaluate, fine_tune_one_epoch

__all__ = [
    "CompressionConfig",
    "RoundRecord",
    "Checkpoint",
    "CompressionResult",
    "gradient_snapshot",
    "compress",
    "history_csv",
]

SNAPSHOT_RAYS = 4096
HISTORY_COLUMNS = ("round", "sparsity", "removed", "re_included", "psnr_db", "size_bytes")


@dataclass
class CompressionConfig:
    gamma: float = 0.5
    delta: float = 0.5
    delta_t_db: float = 1.0
    scope: Scope = Scope.VOXELS_ONLY
    topo: NeighborTopology = NeighborTopology.FACE6
    reinclude_enabled: bool = True
    quantize_enabled: bool = True
    max_rounds: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if not self.delta_t_db > 0.0:
            raise ValueError(f"delta_t_db must be positive, got {self.delta_t_db}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")


@dataclass
class RoundRecord:
    round_index: int
    sparsity: float
    removed: int
    re_included: int
    psnr_db: float
    size_bytes: int


@dataclass
class Checkpoint:
    store: ParameterStore
    report: QualityReport
    round_index: int
    sparsity: float
    size_bytes: int


@dataclass
class CompressionResult:
    low: Checkpoint
    high: Checkpoint
    baseline_psnr_db: float
    history: list[RoundRecord] = field(default_factory=list)


def gradient_snapshot(
    model: RadianceModel,
    cameras: CameraSet,
    n_rays: int = SNAPSHOT_RAYS,
    seed: int = 0,
) -> GradientBuffer:
    """Gradients of the MSE loss on a fixed, seed-chosen ray minibatch."""
    origins, dirs, gt = cameras.all_rays()
    total = origins.shape[0]
    if total == 0:
        raise ValueError("no rays to snapshot gradients on")
    rng = np.random.default_rng(seed)
    take = rng.choice(total, size=min(n_rays, total), replace=False)
    _, grads = backward_rays(model, origins[take], dirs[take], gt[take])
    return grads


def _measured(model: RadianceModel, quantize: bool) -> tuple[RadianceModel, bytes]:
    """Serialization round-trip of the current parameters plus the bytes."""
    data = codec.encode(model.store, quantize=quantize)
    roundtrip = RadianceModel(codec.decode(data), model.step_size, model.background.copy())
    return roundtrip, data


def compress(
    model: RadianceModel,
    train_cams: CameraSet,
    val_cams: CameraSet,
    cfg: CompressionConfig,
) -> CompressionResult:
    """Run the removal/re-inclusion loop on ``model`` (mutated in place)."""
    baseline = evaluate(model, val_cams).psnr_db
    if not math.isfinite(baseline) or baseline - cfg.delta_t_db <= 0.0:
        raise ValueError(
            f"degenerate stop criterion: baseline validation PSNR {baseline:.3f} dB "
            f"with budget {cfg.delta_t_db} dB"
        )
    floor = baseline - cfg.delta_t_db

    initial_measured, initial_bytes = _measured(model, cfg.quantize_enabled)
    fallback = Checkpoint(
        store=initial_measured.store.clone(),
        report=evaluate(initial_measured, val_cams),
        round_index=0,
        sparsity=sparsity(model.store),
        size_bytes=len(initial_bytes),
    )

    opt = Adam(model.store)
    rng = np.random.default_rng(cfg.seed)
    history: list[RoundRecord] = []
    low: Checkpoint | None = None
    high: Checkpoint | None = None

    for round_index in range(1, cfg.max_rounds + 1):
        loss = fine_tune_one_epoch(model, train_cams, opt, rng)
        if not math.isfinite(loss):
            raise FloatingPointError(f"round {round_index}: non-finite fine-tuning loss {loss!r}")

        grads = gradient_snapshot(model, train_cams, seed=cfg.seed)
        scores = layer_normalize(taylor_scores(model.store, grads, cfg.scope))
        removal = remove(model.store, scores, cfg.gamma)
        re_included = 0
        if cfg.reinclude_enabled:
            t_inc = inclusion_threshold(grads, model.store, cfg.delta, cfg.scope)
            re_included += reinclude(model.store, grads, t_inc, cfg.topo).re_included_total
            if cfg.scope is Scope.ALL_LAYERS:
                re_included += reinclude_dense(model.store, grads, t_inc).re_included_total

        measured, data = _measured(model, cfg.quantize_enabled)
        round_report = evaluate(measured, val_cams)
        if not math.isfinite(round_report.psnr_db):
            raise FloatingPointError(f"round {round_index}: non-finite validation PSNR")
        record = RoundRecord(
            round_index=round_index,
            sparsity=sparsity(model.store),
            removed=removal.removed_total,
            re_included=re_included,
            psnr_db=round_report.psnr_db,
            size_bytes=len(data),
        )
        history.append(record)
        if round_report.psnr_db < floor:
            break
        checkpoint = Checkpoint(
            store=measured.store.clone(),
            report=round_report,
            round_index=round_index,
            sparsity=record.sparsity,
            size_bytes=record.size_bytes,
        )
        high = checkpoint
        if low is None or checkpoint.report.psnr_db > low.report.psnr_db:
            low = checkpoint

    if high is None:
        high = fallback
    if low is None:
        low = fallback
    return CompressionResult(low=low, high=high, baseline_psnr_db=baseline, history=history)


def history_csv(history: list[RoundRecord]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for r in history:
        lines.append(
            f"{r.round_index},{r.sparsity:.6f},{r.removed},{r.re_included},"
            f"{r.psnr_db:.4f},{r.size_bytes}"
        )
    return "\n".join(lines) + "\n"
