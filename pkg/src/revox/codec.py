"""Binary model container: per-layer affine 8-bit quantization + raw LZMA.

Layout (all little-endian):

    magic (4 bytes)   "RNRF" quantized / "RNRD" full-precision debug
    u16 version       currently 1
    u16 layer_count
    <one raw LZMA2 stream (preset 6, 8 MiB dictionary) holding, per layer>
        u16 name_len, UTF-8 name
        u8  kind      0 dense, 1 voxel3d
        u8  rank, u32 dims[rank]
        u8  channels
        f32 scale, f32 offset
        bitmap        ceil(sites/8) bytes, keep bits LSB-first, flat
                      row-major site order
        u32 kept_count
        kept_count * channels values: u8 codes ("RNRF") / f32 ("RNRD")

Quantization is per layer over kept values only: offset = min, scale =
(max - min) / 255; a constant layer stores scale 1 so it round-trips bit
exactly. Encoding the decode of an encode reproduces the bytes.
"""

from __future__ import annotations

import lzma
import math
import struct
from dataclasses import dataclass

import numpy as np

from .grid import Dense, Layer, ParameterStore, VoxelGrid3D, sparsity

__all__ = [
    "CodecError",
    "BadMagicError",
    "UnsupportedVersionError",
    "CorruptContainerError",
    "QuantSpec",
    "quantize_layer",
    "encode",
    "decode",
    "CompressionReport",
    "report",
]

MAGIC_QUANTIZED = b"RNRF"
MAGIC_DEBUG = b"RNRD"
VERSION = 1

KIND_DENSE = 0
KIND_VOXEL3D = 1

_FILTERS = [{"id": lzma.FILTER_LZMA2, "preset": 6, "dict_size": 1 << 23}]


class CodecError(Exception):
    """Base class for container encode/decode failures."""


class BadMagicError(CodecError):
    pass


class UnsupportedVersionError(CodecError):
    pass


class CorruptContainerError(CodecError):
    pass


@dataclass(frozen=True)
class QuantSpec:
    """Affine map code -> code * scale + offset for one layer."""

    scale: float
    offset: float

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        return codes.astype(np.float64) * self.scale + self.offset


# Layers whose value range is below this fraction of their magnitude are
# stored as constants: the range sits beneath meaningful 8-bit resolution
# against a float32 offset, and collapsing it keeps re-encoding byte-exact.
_CONSTANT_RANGE = 1e-4


def quantize_layer(layer: Layer) -> tuple[QuantSpec, np.ndarray]:
    """8-bit codes for the kept values of one layer.

    Returns the spec plus a (kept_sites, channels) uint8 array in flat
    site order. The spec's scale/offset are float32 values, matching what
    the container stores, so quantizing dequantized data is a fixed point
    and re-encoding a decoded store reproduces the bytes.
    """
    kept = layer.site_values()[layer.flat_mask()]
    if not np.all(np.isfinite(kept)):
        raise ValueError(f"layer {layer.name!r} holds non-finite values")
    if kept.size == 0:
        return QuantSpec(scale=1.0, offset=0.0), np.zeros((0, layer.channels), dtype=np.uint8)
    lo = float(kept.min())
    hi = float(kept.max())
    offset = float(np.float32(lo))
    span = hi - lo
    scale = float(np.float32(span / 255.0))
    if span <= _CONSTANT_RANGE * max(abs(lo), abs(hi)) or not scale > 0.0:
        return (
            QuantSpec(scale=1.0, offset=offset),
            np.zeros((kept.shape[0], layer.channels), dtype=np.uint8),
        )
    codes = np.clip(np.rint((kept - offset) / scale), 0, 255).astype(np.uint8)
    return QuantSpec(scale=scale, offset=offset), codes


def _pack_layer(layer: Layer, quantize: bool) -> bytes:
    name = layer.name.encode("utf-8")
    if isinstance(layer.kind, VoxelGrid3D):
        kind_code, dims, channels = KIND_VOXEL3D, layer.kind.shape, layer.kind.channels
    else:
        kind_code, dims, channels = KIND_DENSE, layer.kind.shape, 1
    if quantize:
        spec, codes = quantize_layer(layer)
        payload = codes.tobytes()
        scale, offset = spec.scale, spec.offset
    else:
        kept = layer.site_values()[layer.flat_mask()]
        if not np.all(np.isfinite(kept)):
            raise ValueError(f"layer {layer.name!r} holds non-finite values")
        payload = kept.astype("<f4").tobytes()
        scale, offset = 1.0, 0.0

    out = bytearray()
    out += struct.pack("<H", len(name)) + name
    out += struct.pack("<BB", kind_code, len(dims))
    out += struct.pack(f"<{len(dims)}I", *dims)
    out += struct.pack("<B", channels)
    out += struct.pack("<ff", scale, offset)
    out += np.packbits(layer.flat_mask(), bitorder="little").tobytes()
    out += struct.pack("<I", layer.kept_count)
    out += payload
    return bytes(out)


def encode(store: ParameterStore, quantize: bool = True) -> bytes:
    """Serialize a store; ``quantize=False`` keeps float32 values (debug)."""
    if len(store) == 0:
        raise ValueError("refusing to encode an empty store")
    magic = MAGIC_QUANTIZED if quantize else MAGIC_DEBUG
    body = b"".join(_pack_layer(layer, quantize) for layer in store)
    stream = lzma.compress(body, format=lzma.FORMAT_RAW, filters=_FILTERS)
    return magic + struct.pack("<HH", VERSION, len(store)) + stream


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptContainerError(
                f"layer records truncated: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def _unpack_layer(reader: _Reader, quantized: bool) -> Layer:
    (name_len,) = reader.unpack("<H")
    try:
        name = reader.take(name_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptContainerError(f"layer name is not valid UTF-8: {exc}") from None
    kind_code, rank = reader.unpack("<BB")
    dims = reader.unpack(f"<{rank}I")
    (channels,) = reader.unpack("<B")
    scale, offset = reader.unpack("<ff")

    if kind_code == KIND_VOXEL3D:
        if rank != 3:
            raise CorruptContainerError(f"voxel layer {name!r} has rank {rank}, expected 3")
        if channels < 1:
            raise CorruptContainerError(f"voxel layer {name!r} has zero channels")
        kind: VoxelGrid3D | Dense = VoxelGrid3D(shape=tuple(dims), channels=channels)
    elif kind_code == KIND_DENSE:
        if channels != 1:
            raise CorruptContainerError(f"dense layer {name!r} must have 1 channel, got {channels}")
        kind = Dense(shape=tuple(dims))
    else:
        raise CorruptContainerError(f"unknown layer kind code {kind_code}")

    sites = int(np.prod(dims)) if rank else 0
    if sites < 1:
        raise CorruptContainerError(f"layer {name!r} has no sites")
    bitmap = np.frombuffer(reader.take((sites + 7) // 8), dtype=np.uint8)
    mask_flat = np.unpackbits(bitmap, count=sites, bitorder="little").astype(bool)
    (kept_count,) = reader.unpack("<I")
    if kept_count != int(mask_flat.sum()):
        raise CorruptContainerError(
            f"layer {name!r}: kept_count {kept_count} disagrees with bitmap ({int(mask_flat.sum())})"
        )

    n_values = kept_count * channels
    if quantized:
        codes = np.frombuffer(reader.take(n_values), dtype=np.uint8)
        kept_values = QuantSpec(scale=float(scale), offset=float(offset)).dequantize(codes)
    else:
        kept_values = np.frombuffer(reader.take(4 * n_values), dtype="<f4").astype(np.float64)

    site_values = np.zeros((sites, channels))
    site_values[mask_flat] = kept_values.reshape(kept_count, channels)
    if kind_code == KIND_VOXEL3D:
        values = site_values.reshape(kind.shape + (channels,))
        mask = mask_flat.reshape(kind.shape)
    else:
        values = site_values.reshape(kind.shape)
        mask = mask_flat.reshape(kind.shape)
    return Layer(name=name, kind=kind, values=values, keep_mask=mask)


def decode(data: bytes) -> ParameterStore:
    """Parse container bytes back into a store; failures raise CodecError."""
    if len(data) < 4 or data[:4] not in (MAGIC_QUANTIZED, MAGIC_DEBUG):
        raise BadMagicError(f"not a model container (magic {data[:4]!r})")
    quantized = data[:4] == MAGIC_QUANTIZED
    if len(data) < 8:
        raise CorruptContainerError(f"header truncated at {len(data)} bytes")
    version, layer_count = struct.unpack("<HH", data[4:8])
    if version != VERSION:
        raise UnsupportedVersionError(f"container version {version}; this build reads version {VERSION}")
    try:
        body = lzma.decompress(data[8:], format=lzma.FORMAT_RAW, filters=_FILTERS)
    except lzma.LZMAError as exc:
        raise CorruptContainerError(f"LZMA stream damaged: {exc}") from None

    reader = _Reader(body)
    layers = [_unpack_layer(reader, quantized) for _ in range(layer_count)]
    if not reader.exhausted:
        raise CorruptContainerError(
            f"{len(body) - reader.pos} trailing bytes after the last layer record"
        )
    try:
        store = ParameterStore(layers)
        store.validate()
    except ValueError as exc:
        raise CorruptContainerError(str(exc)) from None
    return store


@dataclass(frozen=True)
class CompressionReport:
    raw_bytes: int
    encoded_bytes: int
    ratio: float
    sparsity: float


def report(store: ParameterStore, data: bytes) -> CompressionReport:
    """Size accounting of encoded bytes against a raw float32 dump."""
    if len(store) == 0:
        raise ValueError("report undefined for an empty store")
    raw = 4 * store.total_scalars
    return CompressionReport(
        raw_bytes=raw,
        encoded_bytes=len(data),
        ratio=raw / len(data),
        sparsity=sparsity(store),
    )
