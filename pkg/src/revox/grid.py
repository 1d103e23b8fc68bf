"""Named parameter layers with keep-masks, and voxel neighborhood queries.

A model is a ParameterStore: an ordered list of layers. Voxel layers are
masked per spatial site (all channels of a site live or die together);
dense layers are masked per scalar. Masked-out entries are kept at exactly
zero so that downstream serialization and rendering can rely on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

__all__ = [
    "VoxelGrid3D",
    "Dense",
    "Layer",
    "ParameterStore",
    "NeighborTopology",
    "neighbors",
    "apply_mask",
    "sparsity",
]


@dataclass(frozen=True)
class VoxelGrid3D:
    """3-D grid of sites, ``channels`` scalars per site."""

    shape: tuple[int, int, int]
    channels: int = 1

    def __post_init__(self) -> None:
        if len(self.shape) != 3 or any(int(n) < 1 for n in self.shape):
            raise ValueError(f"voxel grid needs three positive dims, got {self.shape!r}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")


@dataclass(frozen=True)
class Dense:
    """Plain tensor of scalars; every scalar is its own site."""

    shape: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.shape) < 1 or any(int(n) < 1 for n in self.shape):
            raise ValueError(f"dense layer needs positive dims, got {self.shape!r}")


LayerKind = VoxelGrid3D | Dense


@dataclass
class Layer:
    """One named parameter tensor plus its keep-mask.

    values: float64 array, shape ``(*kind.shape, channels)`` for voxel layers
        and ``kind.shape`` for dense layers. Flattening is C-order, so the
        serialized site order is row-major with channels innermost.
    keep_mask: bool array over sites, shape ``kind.shape``.
    """

    name: str
    kind: LayerKind
    values: np.ndarray
    keep_mask: np.ndarray

    @classmethod
    def voxel(cls, name: str, values: np.ndarray, keep_mask: np.ndarray | None = None) -> "Layer":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 4:
            raise ValueError(f"voxel values must be (nx, ny, nz, channels), got shape {values.shape}")
        kind = VoxelGrid3D(shape=tuple(int(n) for n in values.shape[:3]), channels=int(values.shape[3]))
        if keep_mask is None:
            keep_mask = np.ones(kind.shape, dtype=bool)
        return cls(name, kind, values, np.asarray(keep_mask, dtype=bool))

    @classmethod
    def dense(cls, name: str, values: np.ndarray, keep_mask: np.ndarray | None = None) -> "Layer":
        values = np.asarray(values, dtype=np.float64)
        kind = Dense(shape=tuple(int(n) for n in values.shape))
        if keep_mask is None:
            keep_mask = np.ones(kind.shape, dtype=bool)
        return cls(name, kind, values, np.asarray(keep_mask, dtype=bool))

    # --- geometry -----------------------------------------------------------

    @property
    def is_voxel(self) -> bool:
        return isinstance(self.kind, VoxelGrid3D)

    @property
    def site_shape(self) -> tuple[int, ...]:
        return self.kind.shape

    @property
    def channels(self) -> int:
        return self.kind.channels if isinstance(self.kind, VoxelGrid3D) else 1

    @property
    def total_sites(self) -> int:
        return int(np.prod(self.site_shape))

    @property
    def kept_count(self) -> int:
        return int(np.count_nonzero(self.keep_mask))

    @property
    def removed_count(self) -> int:
        return self.total_sites - self.kept_count

    @property
    def total_scalars(self) -> int:
        return self.total_sites * self.channels

    def site_values(self) -> np.ndarray:
        """View of values as (total_sites, channels), flat row-major site order."""
        return self.values.reshape(self.total_sites, self.channels)

    def flat_mask(self) -> np.ndarray:
        return self.keep_mask.reshape(-1)

    def validate(self) -> None:
        if self.values.dtype != np.float64:
            raise ValueError(f"layer {self.name!r}: values must be float64")
        expected = self.site_shape + ((self.channels,) if self.is_voxel else ())
        if self.values.shape != expected:
            raise ValueError(
                f"layer {self.name!r}: values shape {self.values.shape} != {expected}"
            )
        if self.keep_mask.shape != self.site_shape or self.keep_mask.dtype != np.bool_:
            raise ValueError(f"layer {self.name!r}: keep_mask must be bool with shape {self.site_shape}")
        dead = self.site_values()[~self.flat_mask()]
        if dead.size and np.any(dead != 0.0):
            raise ValueError(f"layer {self.name!r}: masked-out sites must hold exact zeros")

    def clone(self) -> "Layer":
        return Layer(self.name, self.kind, self.values.copy(), self.keep_mask.copy())


@dataclass
class ParameterStore:
    """Ordered collection of uniquely named layers."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self) -> None:
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names: {names}")

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def __contains__(self, name: str) -> bool:
        return any(layer.name == name for layer in self.layers)

    def __getitem__(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(f"no layer named {name!r}")

    def voxel_layers(self) -> list[Layer]:
        return [layer for layer in self.layers if layer.is_voxel]

    def dense_layers(self) -> list[Layer]:
        return [layer for layer in self.layers if not layer.is_voxel]

    @property
    def total_sites(self) -> int:
        return sum(layer.total_sites for layer in self.layers)

    @property
    def kept_count(self) -> int:
        return sum(layer.kept_count for layer in self.layers)

    @property
    def removed_count(self) -> int:
        return self.total_sites - self.kept_count

    @property
    def total_scalars(self) -> int:
        return sum(layer.total_scalars for layer in self.layers)

    def clone(self) -> "ParameterStore":
        return ParameterStore([layer.clone() for layer in self.layers])

    def validate(self) -> None:
        for layer in self.layers:
            layer.validate()


class NeighborTopology(Enum):
    """Spatial connectivity used by re-inclusion."""

    FACE6 = 6
    FULL26 = 26

    @property
    def offsets(self) -> np.ndarray:
        return _OFFSETS[self]


def _build_offsets() -> dict[NeighborTopology, np.ndarray]:
    face6 = np.array(
        [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)],
        dtype=np.int64,
    )
    full26 = np.array(
        [(dx, dy, dz)
         for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
         if (dx, dy, dz) != (0, 0, 0)],
        dtype=np.int64,
    )
    return {NeighborTopology.FACE6: face6, NeighborTopology.FULL26: full26}


_OFFSETS = _build_offsets()


def neighbors(layer: Layer, topo: NeighborTopology, site: tuple[int, int, int]) -> list[tuple[int, int, int]]:
    """In-bounds neighbor sites of ``site`` under the given connectivity.

    Only defined for voxel layers; dense layers have no spatial structure.
    """
    if not layer.is_voxel:
        raise ValueError(f"layer {layer.name!r} is dense; neighborhoods need a voxel layer")
    nx, ny, nz = layer.site_shape
    x, y, z = (int(c) for c in site)
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise IndexError(f"site {site} outside grid {layer.site_shape}")
    out = []
    for dx, dy, dz in topo.offsets:
        px, py, pz = x + dx, y + dy, z + dz
        if 0 <= px < nx and 0 <= py < ny and 0 <= pz < nz:
            out.append((px, py, pz))
    return out


def apply_mask(store: ParameterStore) -> ParameterStore:
    """Zero every masked-out scalar in place; returns the store. Idempotent."""
    for layer in store.layers:
        if layer.is_voxel:
            layer.values[~layer.keep_mask] = 0.0
        else:
            layer.values[~layer.keep_mask] = 0.0
    return store


def sparsity(store: ParameterStore) -> float:
    """Fraction of sites currently masked out, over all layers."""
    total = store.total_sites
    if total == 0:
        raise ValueError("sparsity undefined for an empty store")
    return store.removed_count / total
