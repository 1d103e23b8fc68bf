"""Differentiable volume renderer over a voxel density/color model.

Forward pass: fixed-step ray marching through the unit cube with trilinear
interpolation at segment midpoints, softplus density activation, sigmoid
color activation, and front-to-back alpha compositing over a white
background. The backward pass is hand-written reverse mode and fills
gradients for every stored scalar, including masked-out sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Layer, ParameterStore

__all__ = [
    "DENSITY_SHIFT",
    "RadianceModel",
    "Camera",
    "CameraSet",
    "GradientBuffer",
    "render_rays",
    "render_ray",
    "render_image",
    "loss_on_rays",
    "backward_rays",
    "backward",
]

BBOX_MIN = np.zeros(3)
BBOX_MAX = np.ones(3)

DENSITY = "density"
COLOR = "color"
COLOR_AFFINE = "color_affine"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), stable on both tails
    return np.logaddexp(0.0, x)


# Offset inside the density activation, sigma = softplus(raw + DENSITY_SHIFT).
# Chosen so a raw value of exactly 0 reads as near-empty space (sigma ~ 5e-5):
# pruning stores zeros, and a zeroed density site must render as transparent
# rather than as softplus(0) = 0.69 fog, or pruning could never be harmless.
DENSITY_SHIFT = -10.0


@dataclass
class GradientBuffer:
    """Per-layer gradient arrays, congruent with the store's value shapes."""

    layers: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, store: ParameterStore) -> "GradientBuffer":
        return cls({layer.name: np.zeros_like(layer.values) for layer in store})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layers[name]

    def add(self, other: "GradientBuffer") -> None:
        for name, arr in other.layers.items():
            self.layers[name] += arr

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.layers.values())


@dataclass
class RadianceModel:
    """Density grid (1 channel) + color grid (3 channels) + color affine.

    The affine layer holds six scalars [gain_r, gain_g, gain_b, bias_r,
    bias_g, bias_b] applied to the interpolated color features before the
    sigmoid; at gain 1 / bias 0 it is the identity. Parameters live in the
    unit cube: site (i, j, k) sits at ((i+.5)/nx, (j+.5)/ny, (k+.5)/nz).
    """

    store: ParameterStore
    step_size: float
    background: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self) -> None:
        d, c = self.store[DENSITY], self.store[COLOR]
        if d.kind.channels != 1 or c.kind.channels != 3:
            raise ValueError("density must have 1 channel and color 3")
        if d.site_shape != c.site_shape:
            raise ValueError(f"density {d.site_shape} and color {c.site_shape} shapes differ")
        if not (self.step_size > 0):
            raise ValueError("step_size must be positive")
        shortest = 1.0 / max(d.site_shape)
        if self.step_size > shortest * (1 + 1e-12):
            raise ValueError(f"step_size {self.step_size} exceeds shortest voxel edge {shortest}")

    @classmethod
    def build(
        cls,
        density: np.ndarray,
        color: np.ndarray,
        affine: np.ndarray | None = None,
        step_size: float | None = None,
    ) -> "RadianceModel":
        density = np.asarray(density, dtype=np.float64)
        if density.ndim == 3:
            density = density[..., None]
        if affine is None:
            affine = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        store = ParameterStore(
            [
                Layer.voxel(DENSITY, density),
                Layer.voxel(COLOR, np.asarray(color, dtype=np.float64)),
                Layer.dense(COLOR_AFFINE, np.asarray(affine, dtype=np.float64)),
            ]
        )
        if step_size is None:
            step_size = 1.0 / max(density.shape[:3])
        return cls(store=store, step_size=step_size)

    @property
    def density(self) -> Layer:
        return self.store[DENSITY]

    @property
    def color(self) -> Layer:
        return self.store[COLOR]

    @property
    def color_affine(self) -> Layer:
        return self.store[COLOR_AFFINE]

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.density.site_shape

    def clone(self) -> "RadianceModel":
        return RadianceModel(self.store.clone(), self.step_size, self.background.copy())


@dataclass(frozen=True)
class Camera:
    """Pinhole camera looking at a target point; fov is vertical, degrees."""

    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float]
    fov_deg: float
    width: int
    height: int

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Origins and unit directions through all pixel centers, row-major."""
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)

        tan_half = np.tan(np.deg2rad(self.fov_deg) / 2.0)
        aspect = self.width / self.height
        px = (np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0
        py = 1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0
        gx, gy = np.meshgrid(px * tan_half * aspect, py * tan_half)
        dirs = fwd[None, None, :] + gx[..., None] * right + gy[..., None] * up
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        origins = np.broadcast_to(pos, dirs.shape).reshape(-1, 3)
        return np.ascontiguousarray(origins), dirs.reshape(-1, 3)


@dataclass
class CameraSet:
    """Cameras plus their reference images ((h, w, 3) float in [0, 1])."""

    cameras: list[Camera]
    images: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.cameras) != len(self.images):
            raise ValueError("camera/image count mismatch")

    def __len__(self) -> int:
        return len(self.cameras)

    def all_rays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated (origins, dirs, gt_rgb) over every pixel of every view."""
        origins, dirs, gt = [], [], []
        for cam, img in zip(self.cameras, self.images):
            o, d = cam.rays()
            origins.append(o)
            dirs.append(d)
            gt.append(np.asarray(img, dtype=np.float64).reshape(-1, 3))
        return np.concatenate(origins), np.concatenate(dirs), np.concatenate(gt)


# --- ray/box setup ----------------------------------------------------------


def _box_span(origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Entry/exit distances of each ray through the unit cube (t1 <= t0: miss)."""
    t0 = np.full(origins.shape[0], -np.inf)
    t1 = np.full(origins.shape[0], np.inf)
    for axis in range(3):
        o, d = origins[:, axis], dirs[:, axis]
        parallel = np.abs(d) < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (0.0 - o) / d
            tb = (1.0 - o) / d
        lo = np.minimum(ta, tb)
        hi = np.maximum(ta, tb)
        inside = (o >= 0.0) & (o <= 1.0)
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
        t0 = np.maximum(t0, lo)
        t1 = np.minimum(t1, hi)
    t0 = np.maximum(t0, 0.0)
    # Collapse misses to an empty span at the origin: infinities here would
    # otherwise turn into NaN sample points downstream.
    hit = np.isfinite(t0) & np.isfinite(t1) & (t1 > t0)
    return np.where(hit, t0, 0.0), np.where(hit, t1, 0.0)


@dataclass
class _Samples:
    """Fixed-step sample geometry for a ray batch; parameter independent."""

    seg_len: np.ndarray      # (rays, k) segment lengths, 0 past each ray's exit
    idx0: tuple[np.ndarray, np.ndarray, np.ndarray]
    idx1: tuple[np.ndarray, np.ndarray, np.ndarray]
    frac: tuple[np.ndarray, np.ndarray, np.ndarray]

    def corner(self, cx: int, cy: int, cz: int) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
        """Trilinear weight and integer indices of one of the 8 cell corners."""
        fx, fy, fz = self.frac
        wx = fx if cx else 1.0 - fx
        wy = fy if cy else 1.0 - fy
        wz = fz if cz else 1.0 - fz
        ix = self.idx1[0] if cx else self.idx0[0]
        iy = self.idx1[1] if cy else self.idx0[1]
        iz = self.idx1[2] if cz else self.idx0[2]
        return wx * wy * wz, (ix, iy, iz)


def _sample_geometry(model: RadianceModel, origins: np.ndarray, dirs: np.ndarray) -> _Samples:
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    t0, t1 = _box_span(origins, dirs)
    span = np.maximum(t1 - t0, 0.0)
    dt = model.step_size
    counts = np.ceil(span / dt - 1e-12).astype(np.int64)
    kmax = max(int(counts.max(initial=0)), 1)

    k = np.arange(kmax)[None, :]
    seg_start = t0[:, None] + k * dt
    seg_end = np.minimum(seg_start + dt, t1[:, None])
    seg_len = np.clip(seg_end - seg_start, 0.0, dt)
    t_mid = seg_start + seg_len / 2.0

    pts = origins[:, None, :] + t_mid[..., None] * dirs[:, None, :]
    shape = model.grid_shape
    idx0, idx1, frac = [], [], []
    for axis in range(3):
        n = shape[axis]
        g = pts[..., axis] * n - 0.5
        i0 = np.clip(np.floor(g), 0, max(n - 2, 0)).astype(np.int64)
        i1 = np.minimum(i0 + 1, n - 1)
        f = np.clip(g - i0, 0.0, 1.0)
        idx0.append(i0)
        idx1.append(i1)
        frac.append(f)
    return _Samples(seg_len, tuple(idx0), tuple(idx1), tuple(frac))


_CORNERS = [(cx, cy, cz) for cx in (0, 1) for cy in (0, 1) for cz in (0, 1)]


def _interpolate(samples: _Samples, grid: np.ndarray) -> np.ndarray:
    """Trilinear gather; grid is (nx, ny, nz) or (nx, ny, nz, c)."""
    out = None
    for cx, cy, cz in _CORNERS:
        w, (ix, iy, iz) = samples.corner(cx, cy, cz)
        vals = grid[ix, iy, iz]
        if vals.ndim == w.ndim + 1:
            w = w[..., None]
        contrib = w * vals
        out = contrib if out is None else out + contrib
    return out


@dataclass
class _Forward:
    samples: _Samples
    d_raw: np.ndarray          # (rays, k) interpolated raw density
    sigma: np.ndarray
    feat: np.ndarray           # (rays, k, 3) interpolated raw color
    pre_act: np.ndarray        # gain * feat + bias
    color: np.ndarray          # sigmoid(pre_act)
    alpha: np.ndarray
    trans: np.ndarray          # (rays, k + 1) prefix transmittance
    rgb: np.ndarray            # (rays, 3)


def _forward(model: RadianceModel, origins: np.ndarray, dirs: np.ndarray) -> _Forward:
    samples = _sample_geometry(model, origins, dirs)
    d_raw = _interpolate(samples, model.density.values[..., 0])
    sigma = _softplus(d_raw + DENSITY_SHIFT)
    feat = _interpolate(samples, model.color.values)
    gain = model.color_affine.values[:3]
    bias = model.color_affine.values[3:]
    pre_act = feat * gain + bias
    color = _sigmoid(pre_act)

    alpha = -np.expm1(-sigma * samples.seg_len)
    one_minus = 1.0 - alpha
    trans = np.ones((alpha.shape[0], alpha.shape[1] + 1))
    np.cumprod(one_minus, axis=1, out=trans[:, 1:])
    weights = trans[:, :-1] * alpha
    rgb = np.einsum("rk,rkc->rc", weights, color) + trans[:, -1:] * model.background[None, :]
    return _Forward(samples, d_raw, sigma, feat, pre_act, color, alpha, trans, rgb)


def render_rays(model: RadianceModel, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Render a ray batch; returns (rgb (rays, 3), background transmittance)."""
    fwd = _forward(model, origins, dirs)
    _check_finite_render(model, fwd.rgb)
    return fwd.rgb, fwd.trans[:, -1].copy()


def render_ray(model: RadianceModel, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
    rgb, _ = render_rays(model, np.asarray(origin)[None, :], np.asarray(direction)[None, :])
    return rgb[0]


def render_image(model: RadianceModel, camera: Camera) -> np.ndarray:
    origins, dirs = camera.rays()
    rgb, _ = render_rays(model, origins, dirs)
    return rgb.reshape(camera.height, camera.width, 3)


def loss_on_rays(model: RadianceModel, origins: np.ndarray, dirs: np.ndarray, gt_rgb: np.ndarray) -> float:
    """Mean squared error of the rendered batch against target colors."""
    rgb, _ = render_rays(model, origins, dirs)
    gt_rgb = np.asarray(gt_rgb, dtype=np.float64)
    if rgb.shape != gt_rgb.shape:
        raise ValueError(f"target shape {gt_rgb.shape} != rendered {rgb.shape}")
    return float(np.mean((rgb - gt_rgb) ** 2))


def _check_finite_render(model: RadianceModel, rgb: np.ndarray) -> None:
    if np.all(np.isfinite(rgb)):
        return
    for layer in model.store:
        bad = ~np.isfinite(layer.values)
        if np.any(bad):
            site = np.unravel_index(int(np.argmax(bad)), layer.values.shape)
            raise FloatingPointError(
                f"non-finite forward pass; layer {layer.name!r} holds a non-finite value at {site}"
            )
    raise FloatingPointError("non-finite forward pass with finite parameters (check step_size/cameras)")


def _scatter_grid(
    shape: tuple[int, int, int],
    channels: int,
    samples: _Samples,
    grad_samples: np.ndarray,
) -> np.ndarray:
    """Accumulate per-sample gradients back into a grid via corner weights."""
    n_cells = int(np.prod(shape))
    flat = np.zeros(n_cells * channels)
    ny, nz = shape[1], shape[2]
    for cx, cy, cz in _CORNERS:
        w, (ix, iy, iz) = samples.corner(cx, cy, cz)
        lin = (ix * ny + iy) * nz + iz
        if channels == 1:
            flat += np.bincount(lin.ravel(), weights=(w * grad_samples).ravel(), minlength=n_cells)
        else:
            contrib = w[..., None] * grad_samples
            base = lin.ravel() * channels
            for c in range(channels):
                flat += np.bincount(
                    base + c, weights=contrib[..., c].ravel(), minlength=n_cells * channels
                )
    return flat.reshape(shape + (channels,))


def backward_rays(
    model: RadianceModel,
    origins: np.ndarray,
    dirs: np.ndarray,
    gt_rgb: np.ndarray,
) -> tuple[float, GradientBuffer]:
    """MSE loss on a ray batch and its gradient w.r.t. every stored scalar."""
    gt_rgb = np.asarray(gt_rgb, dtype=np.float64)
    fwd = _forward(model, origins, dirs)
    _check_finite_render(model, fwd.rgb)
    n_rays = fwd.rgb.shape[0]
    resid = fwd.rgb - gt_rgb
    loss = float(np.mean(resid ** 2))
    d_rgb = resid * (2.0 / resid.size)

    alpha, trans, color = fwd.alpha, fwd.trans, fwd.color
    kmax = alpha.shape[1]
    weights = trans[:, :-1] * alpha

    # d loss / d color, then through the affine + sigmoid
    d_color = weights[..., None] * d_rgb[:, None, :]
    d_pre = d_color * color * (1.0 - color)
    gain = model.color_affine.values[:3]
    d_feat = d_pre * gain
    d_gain = np.einsum("rkc,rkc->c", d_pre, fwd.feat)
    d_bias = d_pre.sum(axis=(0, 1))

    # d loss / d alpha via a reverse scan over the compositing recurrence
    u = np.einsum("rkc,rc->rk", color, d_rgb)
    d_alpha = np.empty_like(alpha)
    acc = d_rgb @ model.background  # d loss / d final transmittance
    for k in range(kmax - 1, -1, -1):
        d_alpha[:, k] = trans[:, k] * (u[:, k] - acc)
        acc = alpha[:, k] * u[:, k] + (1.0 - alpha[:, k]) * acc

    d_sigma = d_alpha * fwd.samples.seg_len * np.exp(-fwd.sigma * fwd.samples.seg_len)
    d_draw = d_sigma * _sigmoid(fwd.d_raw + DENSITY_SHIFT)

    shape = model.grid_shape
    grads = GradientBuffer(
        {
            DENSITY: _scatter_grid(shape, 1, fwd.samples, d_draw),
            COLOR: _scatter_grid(shape, 3, fwd.samples, d_feat),
            COLOR_AFFINE: np.concatenate([d_gain, d_bias]),
        }
    )
    if not np.isfinite(loss) or not grads.all_finite():
        raise FloatingPointError(f"non-finite loss or gradients on a {n_rays}-ray batch")
    return loss, grads


def backward(
    model: RadianceModel,
    cameras: list[Camera],
    gt_images: list[np.ndarray],
) -> tuple[float, GradientBuffer]:
    """Loss and gradients over every pixel of the given views."""
    if len(cameras) != len(gt_images) or not cameras:
        raise ValueError("need equal, nonzero camera/image counts")
    batch = CameraSet(list(cameras), list(gt_images))
    origins, dirs, gt = batch.all_rays()
    return backward_rays(model, origins, dirs, gt)
