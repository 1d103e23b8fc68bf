"""Renderer correctness: closed forms, compositing identities, gradients.

The analytic gradient is checked here on a handful of scalars; the full
finite-difference sweep over every parameter lives in test_acceptance.
"""

import math

import numpy as np
import pytest

from revox.render import (
    DENSITY_SHIFT,
    Camera,
    RadianceModel,
    _box_span,
    _forward,
    _softplus,
    backward_rays,
    loss_on_rays,
    render_image,
    render_ray,
    render_rays,
)
from revox.scene import (
    INSIDE_DENSITY,
    OUTSIDE_DENSITY,
    SceneSpec,
    init_model,
    make_synthetic_scene,
    split_cameras,
)


def _constant_model(d_raw, feat, n=4):
    density = np.full((n, n, n), float(d_raw))
    color = np.full((n, n, n, 3), 0.0) + np.asarray(feat, dtype=np.float64)
    return RadianceModel.build(density, color)


def _random_model(rng, n=4):
    density = rng.uniform(5.0, 14.0, size=(n, n, n))
    color = rng.uniform(-2.0, 2.0, size=(n, n, n, 3))
    affine = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]) + rng.normal(scale=0.2, size=6)
    return RadianceModel.build(density, color, affine)


def _hitting_rays(rng, count):
    """Random rays guaranteed to pass through the unit cube."""
    target = rng.uniform(0.2, 0.8, size=(count, 3))
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = target - 2.0 * dirs
    return origins, dirs


class TestClosedForms:
    def test_homogeneous_medium_axis_ray(self):
        # Constant sigma over a unit path length L composites to
        # (1 - e^{-sigma L}) * color + e^{-sigma L} * background, exactly,
        # independent of how many segments the march uses.
        d_raw, feat = 12.0, 0.3
        model = _constant_model(d_raw, feat)
        sigma = float(_softplus(np.array(d_raw + DENSITY_SHIFT)))
        col = 1.0 / (1.0 + math.exp(-feat))
        rgb = render_ray(model, np.array([-0.5, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]))
        expect = (1.0 - math.exp(-sigma)) * col + math.exp(-sigma) * 1.0
        np.testing.assert_allclose(rgb, expect, rtol=1e-12)

    def test_homogeneous_medium_oblique_ray(self):
        model = _constant_model(11.0, np.array([0.4, -0.2, 1.1]))
        origin = np.array([[-0.2, -0.3, 0.5]])
        direction = np.array([[1.0, 1.0, 0.1]])
        direction /= np.linalg.norm(direction)
        t0, t1 = _box_span(origin, direction)
        length = float(t1[0] - t0[0])
        assert length > 0
        sigma = float(_softplus(np.array(11.0 + DENSITY_SHIFT)))
        col = 1.0 / (1.0 + np.exp(-np.array([0.4, -0.2, 1.1])))
        trans = math.exp(-sigma * length)
        rgb, bg_trans = render_rays(model, origin, direction)
        np.testing.assert_allclose(rgb[0], (1 - trans) * col + trans, rtol=1e-10)
        assert bg_trans[0] == pytest.approx(trans, rel=1e-10)

    def test_opaque_slab_saturates_to_surface_color(self):
        model = _constant_model(400.0, -0.7)
        rgb, bg_trans = render_rays(
            model, np.array([[0.5, 0.5, -1.0]]), np.array([[0.0, 0.0, 1.0]])
        )
        np.testing.assert_allclose(rgb[0], 1.0 / (1.0 + math.exp(0.7)), rtol=1e-9)
        assert bg_trans[0] < 1e-12

    def test_empty_grid_renders_background(self):
        # Raw density of -40 sits far below the activation knee and must read
        # as vacuum: the ray keeps full transmittance and returns background.
        model = _constant_model(-40.0, 0.0)
        rgb, bg_trans = render_rays(
            model, np.array([[0.5, -1.0, 0.5]]), np.array([[0.0, 1.0, 0.0]])
        )
        np.testing.assert_allclose(rgb[0], model.background, atol=1e-12)
        assert bg_trans[0] == pytest.approx(1.0, abs=1e-12)

    def test_zeroed_grid_is_transparent(self):
        # Pruning writes exact zeros; a fully zeroed model must be (near)
        # background, not fog. This is the property DENSITY_SHIFT buys.
        model = _constant_model(0.0, 0.0)
        rgb, _ = render_rays(
            model, np.array([[-0.5, 0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]])
        )
        np.testing.assert_allclose(rgb[0], model.background, atol=1e-4)

    def test_miss_ray_is_pure_background(self):
        model = _constant_model(25.0, 1.0)
        rgb, bg_trans = render_rays(
            model, np.array([[-1.0, 5.0, 0.5]]), np.array([[1.0, 0.0, 0.0]])
        )
        np.testing.assert_array_equal(rgb[0], model.background)
        assert bg_trans[0] == 1.0


class TestCompositing:
    def test_weights_and_final_transmittance_partition_unity(self):
        rng = np.random.default_rng(7)
        model = _random_model(rng, n=5)
        origins, dirs = _hitting_rays(rng, 32)
        fwd = _forward(model, origins, dirs)
        weights = fwd.trans[:, :-1] * fwd.alpha
        total = weights.sum(axis=1) + fwd.trans[:, -1]
        np.testing.assert_allclose(total, 1.0, atol=1e-6)

    def test_segment_lengths_cover_exact_span(self):
        rng = np.random.default_rng(8)
        model = _random_model(rng, n=4)
        origins, dirs = _hitting_rays(rng, 16)
        t0, t1 = _box_span(origins, dirs)
        fwd = _forward(model, origins, dirs)
        np.testing.assert_allclose(fwd.samples.seg_len.sum(axis=1), t1 - t0, atol=1e-12)
        assert np.all(fwd.samples.seg_len <= model.step_size + 1e-12)

    def test_render_deterministic(self):
        rng = np.random.default_rng(9)
        model = _random_model(rng)
        origins, dirs = _hitting_rays(rng, 10)
        a, _ = render_rays(model, origins, dirs)
        b, _ = render_rays(model, origins, dirs)
        np.testing.assert_array_equal(a, b)


class TestBoxSpan:
    def test_axis_ray_through_center(self):
        t0, t1 = _box_span(np.array([[-1.0, 0.5, 0.5]]), np.array([[1.0, 0.0, 0.0]]))
        assert t0[0] == pytest.approx(1.0)
        assert t1[0] == pytest.approx(2.0)

    def test_origin_inside_starts_at_zero(self):
        t0, t1 = _box_span(np.array([[0.5, 0.5, 0.5]]), np.array([[0.0, 0.0, 1.0]]))
        assert t0[0] == 0.0
        assert t1[0] == pytest.approx(0.5)

    def test_parallel_miss(self):
        t0, t1 = _box_span(np.array([[0.5, 0.5, 2.0]]), np.array([[1.0, 0.0, 0.0]]))
        assert t1[0] <= t0[0]


class TestCameras:
    def test_ray_shapes_and_unit_directions(self):
        cam = Camera((2.0, 0.5, 0.5), (0.5, 0.5, 0.5), (0.0, 0.0, 1.0), 40.0, 6, 4)
        origins, dirs = cam.rays()
        assert origins.shape == (24, 3)
        assert dirs.shape == (24, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(origins, np.broadcast_to([2.0, 0.5, 0.5], (24, 3)))

    def test_central_pixels_look_at_target(self):
        cam = Camera((2.0, 0.5, 0.5), (0.5, 0.5, 0.5), (0.0, 0.0, 1.0), 40.0, 8, 8)
        _, dirs = cam.rays()
        mean_dir = dirs.mean(axis=0)
        mean_dir /= np.linalg.norm(mean_dir)
        np.testing.assert_allclose(mean_dir, [-1.0, 0.0, 0.0], atol=1e-9)

    def test_render_image_shape_and_range(self):
        model = _constant_model(12.0, 0.5)
        cam = Camera((2.0, 0.5, 0.5), (0.5, 0.5, 0.5), (0.0, 0.0, 1.0), 40.0, 9, 7)
        img = render_image(model, cam)
        assert img.shape == (7, 9, 3)
        assert np.all(img >= 0.0) and np.all(img <= 1.0)


class TestGradients:
    def test_matches_central_differences_on_sampled_scalars(self):
        rng = np.random.default_rng(11)
        model = _random_model(rng, n=4)
        origins, dirs = _hitting_rays(rng, 8)
        gt = rng.uniform(size=(8, 3))
        loss, grads = backward_rays(model, origins, dirs, gt)
        assert loss == pytest.approx(loss_on_rays(model, origins, dirs, gt))

        h = 1e-3
        checks = []
        for name, count in ((("density"), 20), (("color"), 20), (("color_affine"), 6)):
            layer = model.store[name]
            flat_idx = rng.choice(layer.values.size, size=min(count, layer.values.size), replace=False)
            for fi in flat_idx:
                pos = np.unravel_index(int(fi), layer.values.shape)
                orig = layer.values[pos]
                layer.values[pos] = orig + h
                up = loss_on_rays(model, origins, dirs, gt)
                layer.values[pos] = orig - h
                down = loss_on_rays(model, origins, dirs, gt)
                layer.values[pos] = orig
                checks.append((grads[name][pos], (up - down) / (2 * h)))
        for analytic, numeric in checks:
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            assert err <= 1e-4

    def test_masked_out_sites_still_receive_gradients(self):
        rng = np.random.default_rng(12)
        model = _random_model(rng, n=4)
        site = (2, 2, 2)
        model.density.keep_mask[site] = False
        model.density.values[site] = 0.0
        origins, dirs = _hitting_rays(rng, 64)
        _, grads = backward_rays(model, origins, dirs, rng.uniform(size=(64, 3)))
        assert grads["density"][site][0] != 0.0

    def test_gradient_deterministic(self):
        rng = np.random.default_rng(13)
        model = _random_model(rng)
        origins, dirs = _hitting_rays(rng, 12)
        gt = rng.uniform(size=(12, 3))
        loss_a, grads_a = backward_rays(model, origins, dirs, gt)
        loss_b, grads_b = backward_rays(model, origins, dirs, gt)
        assert loss_a == loss_b
        for name in ("density", "color", "color_affine"):
            np.testing.assert_array_equal(grads_a[name], grads_b[name])

    def test_nonfinite_parameter_raises_and_names_layer(self):
        model = _constant_model(10.0, 0.0)
        model.color.values[1, 1, 1, 0] = np.nan
        origins, dirs = _hitting_rays(np.random.default_rng(14), 4)
        with pytest.raises(FloatingPointError, match="color"):
            render_rays(model, origins, dirs)
        with pytest.raises(FloatingPointError):
            backward_rays(model, origins, dirs, np.zeros((4, 3)))


class TestModelValidation:
    def test_step_size_bounds(self):
        density = np.zeros((4, 4, 4))
        color = np.zeros((4, 4, 4, 3))
        with pytest.raises(ValueError, match="step_size"):
            RadianceModel.build(density, color, step_size=0.5)
        with pytest.raises(ValueError, match="step_size"):
            RadianceModel.build(density, color, step_size=-0.1)
        RadianceModel.build(density, color, step_size=0.25)

    def test_channel_and_shape_checks(self):
        with pytest.raises(ValueError):
            RadianceModel.build(np.zeros((4, 4, 4)), np.zeros((4, 4, 4, 2)))
        with pytest.raises(ValueError):
            RadianceModel.build(np.zeros((4, 4, 4)), np.zeros((5, 5, 5, 3)))

    def test_clone_is_independent(self):
        model = _constant_model(10.0, 0.2)
        dup = model.clone()
        dup.density.values[0, 0, 0, 0] = 99.0
        assert model.density.values[0, 0, 0, 0] == 10.0


class TestSyntheticScenes:
    def test_reference_sphere_contained_and_binary(self):
        spec = SceneSpec()
        reference, views = make_synthetic_scene(spec)
        raw = reference.density.values[..., 0]
        assert set(np.unique(raw)) == {OUTSIDE_DENSITY, INSIDE_DENSITY}
        # The sphere (radius 0.3 about the cube center) never touches the
        # boundary shell of sites, so every view sees the full silhouette.
        assert np.all(raw[0, :, :] == OUTSIDE_DENSITY)
        assert np.all(raw[-1, :, :] == OUTSIDE_DENSITY)
        assert raw[spec.grid_n // 2, spec.grid_n // 2, spec.grid_n // 2] == INSIDE_DENSITY

    def test_views_are_valid_images(self):
        spec = SceneSpec(n_views=4, resolution=16)
        _, views = make_synthetic_scene(spec)
        assert len(views) == 4
        for cam, img in zip(views.cameras, views.images):
            assert img.shape == (spec.resolution, spec.resolution, 3)
            assert np.all(img >= 0.0) and np.all(img <= 1.0)
            assert cam.width == cam.height == spec.resolution

    def test_every_view_sees_the_object(self):
        _, views = make_synthetic_scene(SceneSpec(n_views=6, resolution=24))
        for img in views.images:
            # White background; the object must darken some pixels.
            assert img.min() < 0.9

    def test_shapes_differ(self):
        imgs = {}
        for shape in ("sphere", "cube", "two_spheres"):
            _, views = make_synthetic_scene(SceneSpec(shape=shape, n_views=2, resolution=16))
            imgs[shape] = views.images[0]
        assert not np.allclose(imgs["sphere"], imgs["cube"])
        assert not np.allclose(imgs["sphere"], imgs["two_spheres"])

    def test_scene_deterministic(self):
        a = make_synthetic_scene(SceneSpec(n_views=2, resolution=12))[1].images
        b = make_synthetic_scene(SceneSpec(n_views=2, resolution=12))[1].images
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_split_cameras(self):
        _, views = make_synthetic_scene(SceneSpec(n_views=10, resolution=12))
        train, val = split_cameras(views)
        assert len(train) == 9 and len(val) == 1
        np.testing.assert_array_equal(val.images[0], views.images[-1])
        train2, val2 = split_cameras(views, val_fraction=0.3)
        assert len(train2) == 7 and len(val2) == 3

    def test_init_model_is_low_density_fog(self):
        spec = SceneSpec()
        model = init_model(spec)
        sigma = _softplus(model.density.values + DENSITY_SHIFT)
        assert np.all(sigma < 0.25)
        assert np.all(sigma > 0.15)
        assert model.grid_shape == (16, 16, 16)
        np.testing.assert_array_equal(
            model.color_affine.values, [1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
        )

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SceneSpec(shape="torus")
        with pytest.raises(ValueError):
            SceneSpec(grid_n=4)
        with pytest.raises(ValueError):
            SceneSpec(n_views=1)
        with pytest.raises(ValueError):
            SceneSpec(resolution=4)
