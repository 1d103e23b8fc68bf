"""Image quality metrics: PSNR and windowed SSIM on [0, 1] images."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["mse", "psnr", "ssim", "QualityReport"]

SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, peak value 1.0.

    Identical inputs give +inf.
    """
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img.mean(axis=2)
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (h, w) or (h, w, c) image, got shape {img.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all fully-inside 8x8 windows at stride 1.

    Color images are reduced to grayscale by a plain channel mean first.
    """
    ga, gb = _gray(a), _gray(b)
    if ga.shape != gb.shape:
        raise ValueError(f"shape mismatch: {ga.shape} vs {gb.shape}")
    h, w = ga.shape
    k = SSIM_WINDOW
    if h < k or w < k:
        raise ValueError(f"image {ga.shape} smaller than the {k}x{k} SSIM window")

    wa = np.lib.stride_tricks.sliding_window_view(ga, (k, k))
    wb = np.lib.stride_tricks.sliding_window_view(gb, (k, k))
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    var_a = (wa ** 2).mean(axis=(2, 3)) - mu_a ** 2
    var_b = (wb ** 2).mean(axis=(2, 3)) - mu_b ** 2
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class QualityReport:
    """Aggregate quality of a model against a set of reference views.

    ``psnr_db`` pools the squared error over every pixel of every view;
    ``per_view_psnr_db`` breaks the same comparison down by view.
    """

    psnr_db: float
    ssim: float
    per_view_psnr_db: list[float] = field(default_factory=list)

    @classmethod
    def from_images(cls, rendered: list[np.ndarray], reference: list[np.ndarray]) -> "QualityReport":
        if len(rendered) != len(reference) or not rendered:
            raise ValueError("need equal, nonzero view counts")
        per_view = [psnr(r, g) for r, g in zip(rendered, reference)]
        pooled = float(np.mean([mse(r, g) for r, g in zip(rendered, reference)]))
        pooled_psnr = math.inf if pooled == 0.0 else 10.0 * math.log10(1.0 / pooled)
        mean_ssim = float(np.mean([ssim(r, g) for r, g in zip(rendered, reference)]))
        return cls(psnr_db=pooled_psnr, ssim=mean_ssim, per_view_psnr_db=per_view)
