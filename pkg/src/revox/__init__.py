"""Voxel radiance field compression by iterated importance pruning."""

from .codec import CodecError, CompressionReport, decode, encode
from .grid import Layer, NeighborTopology, ParameterStore, apply_mask, sparsity
from .importance import Scope
from .metrics import QualityReport, mse, psnr, ssim
from .pipeline import CompressionConfig, CompressionResult, compress
from .render import Camera, CameraSet, RadianceModel, render_image, render_rays
from .scene import SceneSpec, init_model, make_synthetic_scene, split_cameras
from .train import evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "CameraSet",
    "CodecError",
    "CompressionConfig",
    "CompressionReport",
    "CompressionResult",
    "Layer",
    "NeighborTopology",
    "ParameterStore",
    "QualityReport",
    "RadianceModel",
    "SceneSpec",
    "Scope",
    "apply_mask",
    "compress",
    "decode",
    "encode",
    "evaluate",
    "fit",
    "init_model",
    "make_synthetic_scene",
    "mse",
    "psnr",
    "render_image",
    "render_rays",
    "split_cameras",
    "sparsity",
    "ssim",
    "__version__",
]
