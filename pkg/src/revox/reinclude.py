"""Gradient-driven re-inclusion of removed sites next to surviving ones.

A removed voxel site returns when its gradient magnitude clears a threshold
drawn from the kept sites' gradients and it touches the kept set, directly
or through a chain of other qualifying removed sites. The fixed point is
the set of qualifying sites graph-reachable from the kept set, computed by
flood fill. Dense layers have no neighborhoods, so they skip the adjacency
requirement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Layer, NeighborTopology, ParameterStore
from .importance import Scope, quantile
from .render import GradientBuffer

__all__ = ["ReincludeOutcome", "inclusion_threshold", "reinclude", "reinclude_dense"]

# smallest positive float: at delta = 0 any nonzero gradient qualifies,
# while zero-gradient sites never return at any delta
_TINY = float(np.nextafter(0.0, 1.0))


def _site_grad_mag(layer: Layer, grads: GradientBuffer) -> np.ndarray:
    g = grads[layer.name]
    if layer.is_voxel:
        return np.abs(g).sum(axis=-1)
    return np.abs(g)


def inclusion_threshold(
    grads: GradientBuffer,
    store: ParameterStore,
    delta: float,
    scope: Scope = Scope.VOXELS_ONLY,
) -> float:
    """Nearest-rank quantile of kept in-scope sites' gradient magnitudes.

    Floored at the smallest positive float, so delta = 0 admits exactly the
    candidates with nonzero gradient.
    """
    if not (0.0 <= delta <= 1.0):
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    pools = []
    for layer in store:
        if not scope.includes(layer):
            continue
        mags = _site_grad_mag(layer, grads)
        pools.append(mags[layer.keep_mask])
    pool = np.concatenate(pools) if pools else np.empty(0)
    if pool.size == 0:
        raise ValueError("no kept in-scope sites to derive an inclusion threshold from")
    if delta == 0.0:
        return _TINY
    return max(quantile(pool, delta), _TINY)


@dataclass
class ReincludeOutcome:
    threshold: float
    re_included: dict[str, np.ndarray]
    iterations: int

    @property
    def re_included_total(self) -> int:
        return sum(idx.size for idx in self.re_included.values())


def _dilate(mask: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Union of the mask translated by every offset, clipped to bounds."""
    out = np.zeros_like(mask)
    dims = mask.shape
    for off in offsets:
        src = []
        dst = []
        for axis, d in enumerate(off):
            d = int(d)
            n = dims[axis]
            src.append(slice(max(-d, 0), n - max(d, 0)))
            dst.append(slice(max(d, 0), n - max(-d, 0)))
        out[tuple(dst)] |= mask[tuple(src)]
    return out


def reinclude(
    store: ParameterStore,
    grads: GradientBuffer,
    t_inc: float,
    topo: NeighborTopology = NeighborTopology.FACE6,
) -> ReincludeOutcome:
    """Flood-fill re-inclusion over every voxel layer; mutates keep-masks.

    Re-included sites keep value zero; they only become trainable again.
    ``iterations`` counts expansion waves of the largest layer fill (>= 1),
    bounded by the removed-site count plus one.
    """
    if not math.isfinite(t_inc) and t_inc != -math.inf:
        raise ValueError(f"t_inc must be finite or -inf, got {t_inc}")
    offsets = topo.offsets
    re_included: dict[str, np.ndarray] = {}
    iterations = 1
    for layer in store.voxel_layers():
        qualify = (~layer.keep_mask) & (_site_grad_mag(layer, grads) >= t_inc)
        added = np.zeros_like(layer.keep_mask)
        frontier = layer.keep_mask
        waves = 0
        while True:
            wave = _dilate(frontier, offsets) & qualify & ~added
            if not np.any(wave):
                break
            added |= wave
            frontier = wave
            waves += 1
        if np.any(added):
            # removal stored exact zeros, so returning sites restart at zero
            layer.keep_mask |= added
            re_included[layer.name] = np.flatnonzero(added.reshape(-1))
        iterations = max(iterations, waves, 1)
    return ReincludeOutcome(threshold=t_inc, re_included=re_included, iterations=iterations)


def reinclude_dense(store: ParameterStore, grads: GradientBuffer, t_inc: float) -> ReincludeOutcome:
    """Re-include removed dense scalars by gradient alone (no adjacency)."""
    re_included: dict[str, np.ndarray] = {}
    for layer in store.dense_layers():
        back = (~layer.keep_mask) & (_site_grad_mag(layer, grads) >= t_inc)
        if np.any(back):
            layer.keep_mask |= back
            re_included[layer.name] = np.flatnonzero(back.reshape(-1))
    return ReincludeOutcome(threshold=t_inc, re_included=re_included, iterations=1)
