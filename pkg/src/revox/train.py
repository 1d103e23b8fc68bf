"""Minibatch MSE training of a radiance model with a from-scratch Adam."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grid import ParameterStore, apply_mask
from .metrics import QualityReport
from .render import CameraSet, GradientBuffer, RadianceModel, backward_rays, render_image

__all__ = ["Adam", "EpochStats", "fit", "fine_tune_one_epoch", "evaluate"]

BATCH_RAYS = 4096


class Adam:
    """Adam over every layer of a store. Moment buffers are keyed by layer
    name and keep accumulating for masked-out scalars; the mask is enforced
    by the caller after each step, not inside the update."""

    def __init__(
        self,
        store: ParameterStore,
        lr: float = 5e-2,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {layer.name: np.zeros_like(layer.values) for layer in store}
        self.v = {layer.name: np.zeros_like(layer.values) for layer in store}

    def step(self, store: ParameterStore, grads: GradientBuffer) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for layer in store:
            g = grads[layer.name]
            m = self.m[layer.name]
            v = self.v[layer.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            layer.values -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_psnr_db: float


def _epoch_pass(
    model: RadianceModel,
    origins: np.ndarray,
    dirs: np.ndarray,
    gt: np.ndarray,
    opt: Adam,
    rng: np.random.Generator,
    batch_rays: int,
) -> float:
    """One shuffled pass over all rays; returns the ray-weighted mean loss."""
    n = origins.shape[0]
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch_rays):
        take = order[start : start + batch_rays]
        loss, grads = backward_rays(model, origins[take], dirs[take], gt[take])
        if not math.isfinite(loss):
            raise FloatingPointError(f"training diverged: loss {loss!r}")
        opt.step(model.store, grads)
        apply_mask(model.store)
        total += loss * take.size
    return total / n


def fit(
    model: RadianceModel,
    cameras: CameraSet,
    epochs: int,
    opt: Adam | None = None,
    rng: np.random.Generator | None = None,
    batch_rays: int = BATCH_RAYS,
) -> tuple[RadianceModel, list[EpochStats]]:
    """Train in place for ``epochs`` passes; returns the model and history.

    Losses are running minibatch means, so the per-epoch PSNR trails a
    post-hoc evaluation slightly. A warning is raised if more than 10% of
    epochs fail to improve on their predecessor.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if opt is None:
        opt = Adam(model.store)
    if rng is None:
        rng = np.random.default_rng(0)
    origins, dirs, gt = cameras.all_rays()
    apply_mask(model.store)

    history: list[EpochStats] = []
    regressions = 0
    for epoch in range(1, epochs + 1):
        loss = _epoch_pass(model, origins, dirs, gt, opt, rng, batch_rays)
        if history and loss > history[-1].loss:
            regressions += 1
        train_psnr = math.inf if loss == 0.0 else 10.0 * math.log10(1.0 / loss)
        history.append(EpochStats(epoch=epoch, loss=loss, train_psnr_db=train_psnr))
    if regressions > 0.1 * epochs:
        warnings.warn(
            f"loss rose in {regressions}/{epochs} epochs; training may be unstable",
            RuntimeWarning,
            stacklevel=2,
        )
    return model, history


def fine_tune_one_epoch(
    model: RadianceModel,
    cameras: CameraSet,
    opt: Adam,
    rng: np.random.Generator,
    batch_rays: int = BATCH_RAYS,
) -> float:
    """Single shuffled pass over the training rays; returns the mean loss."""
    origins, dirs, gt = cameras.all_rays()
    return _epoch_pass(model, origins, dirs, gt, opt, rng, batch_rays)


def evaluate(model: RadianceModel, cameras: CameraSet) -> QualityReport:
    """Render every view and score it against the set's reference images."""
    rendered = [render_image(model, cam) for cam in cameras.cameras]
    return QualityReport.from_images(rendered, cameras.images)
