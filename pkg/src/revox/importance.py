"""First-order importance scores, per-layer normalization, and removal.

A parameter's score is grad * value, the first-order estimate of the loss
change when it is zeroed. Voxel layers aggregate channels into one score
per spatial site (sum of |grad_c * value_c|); dense layers score each
scalar. Scores are normalized per layer by the layer's max magnitude so
that heterogeneous layers share one removal threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .grid import Layer, ParameterStore
from .render import GradientBuffer

__all__ = [
    "Scope",
    "ImportanceScores",
    "RemovalOutcome",
    "taylor_scores",
    "layer_normalize",
    "quantile",
    "remove",
    "magnitude_remove",
]

# absorbs float representation noise when q * n lands on an integer rank
_RANK_EPS = 1e-9


class Scope(Enum):
    """Which layers participate in removal and re-inclusion."""

    VOXELS_ONLY = "voxels"
    ALL_LAYERS = "all"

    def includes(self, layer: Layer) -> bool:
        return layer.is_voxel or self is Scope.ALL_LAYERS


@dataclass
class ImportanceScores:
    """Per-site scores for every in-scope layer; out-of-scope layers absent."""

    scope: Scope
    raw: dict[str, np.ndarray]
    normalized: dict[str, np.ndarray] | None = None

    def active(self) -> dict[str, np.ndarray]:
        return self.normalized if self.normalized is not None else self.raw


def taylor_scores(store: ParameterStore, grads: GradientBuffer, scope: Scope) -> ImportanceScores:
    """grad * value per scalar; voxel sites sum |grad_c * value_c| over channels."""
    raw: dict[str, np.ndarray] = {}
    for layer in store:
        if not scope.includes(layer):
            continue
        g = grads[layer.name]
        if g.shape != layer.values.shape:
            raise ValueError(f"gradient shape {g.shape} != values {layer.values.shape} in {layer.name!r}")
        if layer.is_voxel:
            raw[layer.name] = np.abs(g * layer.values).sum(axis=-1)
        else:
            raw[layer.name] = g * layer.values
    return ImportanceScores(scope=scope, raw=raw)


def layer_normalize(scores: ImportanceScores) -> ImportanceScores:
    """Divide each layer's scores by its max magnitude (all-zero layers stay 0)."""
    normalized = {}
    for name, arr in scores.raw.items():
        peak = float(np.max(np.abs(arr))) if arr.size else 0.0
        normalized[name] = arr / peak if peak > 0.0 else np.zeros_like(arr)
    return ImportanceScores(scope=scores.scope, raw=scores.raw, normalized=normalized)


def quantile(values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*n)-th smallest element.

    q = 0 returns -inf, a sentinel strictly below every element so that
    threshold tests select nothing.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("quantile of an empty list")
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must lie in [0, 1], got {q}")
    if q == 0.0:
        return -math.inf
    rank = math.ceil(q * values.size - _RANK_EPS)
    idx = min(max(rank, 1), values.size) - 1
    return float(np.partition(values, idx)[idx])


@dataclass
class RemovalOutcome:
    threshold: float
    newly_removed: dict[str, np.ndarray]
    kept_before: int
    kept_after: int

    @property
    def removed_total(self) -> int:
        return sum(idx.size for idx in self.newly_removed.values())


def _removal_threshold(pool: np.ndarray, gamma: float) -> float:
    """Magnitude below which a kept site is dropped.

    ceil(gamma * n) sites are tentatively removed, so the threshold is the
    first surviving order statistic; ties at the threshold survive. gamma=1
    keeps only the arg-max tie class.
    """
    n = pool.size
    k = math.ceil(gamma * n - _RANK_EPS)
    idx = min(max(k, 0), n - 1)
    return float(np.partition(pool, idx)[idx])


def _apply_removal(
    store: ParameterStore,
    site_scores: dict[str, np.ndarray],
    gamma: float,
) -> RemovalOutcome:
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    kept_before = store.kept_count
    pools = []
    for name, arr in site_scores.items():
        layer = store[name]
        pools.append(np.abs(arr[layer.keep_mask]))
    pool = np.concatenate(pools) if pools else np.empty(0)
    if pool.size == 0:
        return RemovalOutcome(-math.inf, {}, kept_before, kept_before)

    threshold = _removal_threshold(pool, gamma)
    newly: dict[str, np.ndarray] = {}
    for name, arr in site_scores.items():
        layer = store[name]
        drop = layer.keep_mask & (np.abs(arr) < threshold)
        if not np.any(drop):
            continue
        layer.keep_mask[drop] = False
        if layer.is_voxel:
            layer.values[drop] = 0.0
        else:
            layer.values[drop] = 0.0
        newly[name] = np.flatnonzero(drop.reshape(-1))
    return RemovalOutcome(threshold, newly, kept_before, store.kept_count)


def remove(store: ParameterStore, scores: ImportanceScores, gamma: float) -> RemovalOutcome:
    """Mask out the lowest-|score| fraction gamma of currently-kept sites.

    Uses normalized scores when present. Masked sites are zeroed; already
    removed sites are never touched or revived.
    """
    return _apply_removal(store, scores.active(), gamma)


def magnitude_remove(store: ParameterStore, gamma: float, scope: Scope = Scope.VOXELS_ONLY) -> RemovalOutcome:
    """Like remove, but scored by raw value magnitude, no normalization."""
    site_scores: dict[str, np.ndarray] = {}
    for layer in store:
        if not scope.includes(layer):
            continue
        if layer.is_voxel:
            site_scores[layer.name] = np.abs(layer.values).sum(axis=-1)
        else:
            site_scores[layer.name] = np.abs(layer.values)
    return _apply_removal(store, site_scores, gamma)
