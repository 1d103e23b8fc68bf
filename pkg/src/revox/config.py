"""Run configuration: nested dataclasses with strict JSON loading.

Config files are plain JSON mirroring the dataclass nesting. Unknown keys
anywhere in the tree are rejected with the dotted path of the offending
key, so typos fail loudly instead of silently using a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .grid import NeighborTopology
from .importance import Scope
from .pipeline import CompressionConfig
from .scene import SHAPES, SceneSpec

__all__ = [
    "SceneConfig",
    "TrainConfig",
    "CompressSettings",
    "RunConfig",
    "ConfigError",
    "load_config",
]


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


@dataclass
class SceneConfig:
    shape: str = "sphere"
    grid_n: int = 16
    n_views: int = 10
    resolution: int = 48

    def spec(self, seed: int) -> SceneSpec:
        return SceneSpec(
            shape=self.shape,
            grid_n=self.grid_n,
            n_views=self.n_views,
            resolution=self.resolution,
            seed=seed,
        )


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-1


@dataclass
class CompressSettings:
    gamma: float = 0.5
    delta: float = 0.5
    delta_t_db: float = 1.0
    scope: str = "voxels"
    connectivity: int = 6
    reinclude: bool = True
    quantize: bool = True
    max_rounds: int = 20

    def pipeline_config(self, seed: int) -> CompressionConfig:
        return CompressionConfig(
            gamma=self.gamma,
            delta=self.delta,
            delta_t_db=self.delta_t_db,
            scope=Scope(self.scope),
            topo=_TOPOLOGIES[self.connectivity],
            reinclude_enabled=self.reinclude,
            quantize_enabled=self.quantize,
            max_rounds=self.max_rounds,
            seed=seed,
        )


@dataclass
class RunConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    compress: CompressSettings = field(default_factory=CompressSettings)


_TOPOLOGIES = {6: NeighborTopology.FACE6, 26: NeighborTopology.FULL26}

_SCALARS = {int: "an integer", float: "a number", str: "a string", bool: "a boolean"}


def _coerce_scalar(value: Any, target: type, path: str) -> Any:
    if target is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target is int and isinstance(value, bool):
        raise ConfigError(f"{path}: expected an integer, got a boolean")
    if not isinstance(value, target):
        raise ConfigError(f"{path}: expected {_SCALARS[target]}, got {value!r}")
    return value


def _build(cls: type, data: Any, path: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {data!r}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown config key: {where}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        target = fields[name].type
        if isinstance(target, str):
            target = _FIELD_TYPES[cls, name]
        if dataclasses.is_dataclass(target):
            kwargs[name] = _build(target, value, sub)
        else:
            kwargs[name] = _coerce_scalar(value, target, sub)
    return cls(**kwargs)


# ``from __future__ import annotations`` leaves dataclass field types as
# strings, so the nested/leaf types are tabulated here for the loader.
_FIELD_TYPES: dict[tuple[type, str], Any] = {
    (RunConfig, "seed"): int,
    (RunConfig, "scene"): SceneConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "compress"): CompressSettings,
    (SceneConfig, "shape"): str,
    (SceneConfig, "grid_n"): int,
    (SceneConfig, "n_views"): int,
    (SceneConfig, "resolution"): int,
    (TrainConfig, "epochs"): int,
    (TrainConfig, "learning_rate"): float,
    (CompressSettings, "gamma"): float,
    (CompressSettings, "delta"): float,
    (CompressSettings, "delta_t_db"): float,
    (CompressSettings, "scope"): str,
    (CompressSettings, "connectivity"): int,
    (CompressSettings, "reinclude"): bool,
    (CompressSettings, "quantize"): bool,
    (CompressSettings, "max_rounds"): int,
}


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.scene.shape not in SHAPES:
        raise ConfigError(f"scene.shape: unknown shape {cfg.scene.shape!r}, expected one of {sorted(SHAPES)}")
    if cfg.train.epochs < 1:
        raise ConfigError(f"train.epochs: must be >= 1, got {cfg.train.epochs}")
    if not cfg.train.learning_rate > 0:
        raise ConfigError(f"train.learning_rate: must be positive, got {cfg.train.learning_rate}")
    if cfg.compress.scope not in {s.value for s in Scope}:
        raise ConfigError(f"compress.scope: expected 'voxels' or 'all', got {cfg.compress.scope!r}")
    if cfg.compress.connectivity not in _TOPOLOGIES:
        raise ConfigError(f"compress.connectivity: expected 6 or 26, got {cfg.compress.connectivity}")
    try:
        cfg.compress.pipeline_config(cfg.seed)
        cfg.scene.spec(cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus flat overrides.

    ``overrides`` maps dotted paths (``"compress.gamma"``) to values and is
    applied after the file, mirroring command-line flags.
    """
    data: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{dotted}: cannot override inside non-object {part!r}")
        node[leaf] = value
    cfg = _build(RunConfig, data, "")
    return _validate(cfg)
