import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carsplat.asset import AssetError, GaussianAsset, PartLabel
from carsplat.render import Camera, render, render_backward
from carsplat.render.gradcheck import check, make_fixture
from carsplat.render.masks import make_part_masks
from carsplat.render.raster import DILATION, MIN_ALPHA

from conftest import random_asset


def splat(means, scale=0.1, opacity=1.0, color=(1.0, 1.0, 1.0), labels=None):
    means = np.atleast_2d(np.asarray(means, dtype=float))
    n = len(means)
    return GaussianAsset(means, np.full((n, 3), scale), np.tile([1.0, 0, 0, 0], (n, 1)),
                         np.full(n, opacity), np.tile(color, (n, 1)), part_labels=labels)


def axis_camera(size=33, fov=40.0):
    # camera on -z looking at the origin along +z; the up hint keeps image axes aligned with x, y
    return Camera.look_at([0, 0, -3.0], [0, 0, 0], size, size, fov, up=(0, -1, 0))


def test_behind_camera_gives_empty_images():
    a = splat([[0, 0, -5.0], [0.1, 0, -4.0]])
    out = render(a, axis_camera())
    assert not out.alpha.any() and not out.rgb.any()


def test_on_axis_isotropic_splat():
    cam = axis_camera()
    out = render(splat([0, 0, 0], scale=0.1), cam)
    i, j = np.unravel_index(np.argmax(out.alpha), out.alpha.shape)
    # pixel centres sit at +0.5, so the principal point (16.5, 16.5) is pixel (16, 16)
    assert (cam.cx, cam.cy) == (16.5, 16.5)
    assert (i, j) == (16, 16)
    # independent scalar oracle of the projected footprint
    s2 = (cam.fx * 0.1 / 3.0) ** 2 + DILATION
    for (di, dj) in [(0, 3), (3, 0), (0, -3), (-3, 0), (2, 2), (-2, 2)]:
        d2 = (di * di + dj * dj) / s2
        expect = math.exp(-0.5 * d2)
        got = out.alpha[16 + di, 16 + dj]
        assert got == pytest.approx(expect, abs=1e-6)
    np.testing.assert_allclose(out.alpha, out.alpha.T, atol=1e-6)
    np.testing.assert_allclose(out.alpha, out.alpha[::-1, ::-1], atol=1e-6)


def test_two_colocated_half_opacity():
    cam = axis_camera()
    one = render(splat([0, 0, 0], opacity=1.0), cam).alpha
    two = render(splat([[0, 0, 0], [0, 0, 0]], opacity=0.5), cam).alpha
    g = one  # opacity 1 leaves the bare falloff
    expect = 1 - (1 - 0.5 * g) * (1 - 0.5 * g)
    expect[0.5 * g < MIN_ALPHA] = 0.0
    np.testing.assert_allclose(two, expect, atol=1e-12)
    assert two[16, 16] == pytest.approx(0.75)


def test_rgb_is_unpremultiplied():
    out = render(splat([0, 0, 0], opacity=0.6, color=(0.2, 0.4, 0.8)), axis_camera())
    on = out.alpha > 0
    np.testing.assert_allclose(out.rgb[on], np.tile([0.2, 0.4, 0.8], (on.sum(), 1)), atol=1e-12)
    assert not out.rgb[~on].any()


def test_depth_order_front_wins():
    cam = axis_camera()
    a = GaussianAsset([[0, 0, 0.5], [0, 0, 0]], np.full((2, 3), 0.1), np.tile([1.0, 0, 0, 0], (2, 1)),
                      [1.0, 1.0], [[0, 0, 1.0], [1.0, 0, 0]])
    rgb = render(a, cam).rgb[16, 16]
    assert rgb[0] > 0.99 and rgb[2] < 0.01


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_alpha_bounds_and_determinism(seed):
    rng = np.random.default_rng(seed)
    a = random_asset(rng, 30)
    cam = Camera.look_at([0.2, -3.5, 1.0], [0, 0, 0], 40, 32)
    o1, o2 = render(a, cam), render(a, cam)
    assert np.array_equal(o1.rgb, o2.rgb) and np.array_equal(o1.alpha, o2.alpha)
    assert o1.alpha.min() >= 0 and o1.alpha.max() <= 1
    assert np.all(np.isfinite(o1.rgb))
    # alpha is zero exactly where nothing contributes
    assert np.array_equal(o1.alpha == 0, o1.n_contrib == 0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), bump=st.floats(0.0, 0.5))
def test_alpha_monotone_in_opacity(seed, bump):
    rng = np.random.default_rng(seed)
    a = random_asset(rng, 12)
    cam = Camera.look_at([0.2, -3.5, 1.0], [0, 0, 0], 24, 24)
    k = int(rng.integers(len(a)))
    op = a.opacities.copy()
    op[k] = min(1.0, op[k] + bump)
    assert np.all(render(a.replace(opacities=op), cam).alpha >= render(a, cam).alpha - 1e-12)


def test_swap_disjoint_splats_bit_identical():
    cam = axis_camera()
    a = splat([[-0.6, 0, 0], [0.6, 0.1, 0.2]], scale=0.05)
    b = a.take([1, 0])
    oa, ob = render(a, cam), render(b, cam)
    assert np.array_equal(oa.rgb, ob.rgb) and np.array_equal(oa.alpha, ob.alpha)


def test_zero_adjoint_zero_gradient(rng):
    a = random_asset(rng, 6)
    cam = Camera.look_at([0, -3, 0.5], [0, 0, 0], 16, 16)
    g = render_backward(a, cam, np.zeros((16, 16, 3)), np.zeros((16, 16)))
    assert not g.means.any() and not g.rotations.any() and not g.scales.any()


def test_adjoint_shape_mismatch(rng):
    a = random_asset(rng, 2)
    cam = Camera.look_at([0, -3, 0.5], [0, 0, 0], 16, 12)
    with pytest.raises(ValueError):
        render_backward(a, cam, np.zeros((16, 16, 3)), np.zeros((16, 16)))


def test_mean_gradient_sign_right_half():
    cam = axis_camera(16)
    a = splat([0, 0, 0], scale=0.15)
    d_alpha = np.zeros((16, 16))
    d_alpha[:, 8:] = 1.0
    g = render_backward(a, cam, np.zeros((16, 16, 3)), d_alpha)
    # camera x is world x here, so pushing the splat to +x raises loss
    assert g.means[0, 0] > 0
    # finite-difference sign agrees
    h = 1e-4
    lp = (render(splat([h, 0, 0], scale=0.15), cam).alpha * d_alpha).sum()
    lm = (render(splat([-h, 0, 0], scale=0.15), cam).alpha * d_alpha).sum()
    assert lp - lm > 0


def test_rotation_gradient_tangent(rng):
    a = random_asset(rng, 8, spread=0.5)
    cam = Camera.look_at([0, -3, 0.5], [0, 0, 0], 24, 24)
    g = render_backward(a, cam, rng.normal(size=(24, 24, 3)), rng.normal(size=(24, 24)))
    assert np.abs((g.rotations * a.rotations).sum(1)).max() < 1e-5
    assert all(np.isfinite(x).all() for x in (g.means, g.rotations, g.scales))


@pytest.mark.parametrize("seed", range(6))
def test_finite_difference_5_gaussians_16px(seed):
    r = check(make_fixture(seed, n=5, size=16))
    assert r.worst < 1e-3, r
    assert sum(r.checked.values()) >= 45


def test_finite_difference_20_gaussians_32px():
    r = check(make_fixture(100, n=20, size=32))
    assert r.worst < 1e-3, r
    assert sum(r.skipped.values()) <= 0.05 * sum(r.checked.values())


def test_masks_threshold_super_level_set():
    cam = axis_camera()
    a = splat([0, 0, 0], opacity=1.0, labels=[PartLabel.WheelFL])
    m = make_part_masks(a, [PartLabel.WheelFL], [cam], 0.5)[PartLabel.WheelFL][0]
    np.testing.assert_array_equal(m, render(a, cam).alpha >= 0.5)
    assert set(np.unique(m)) <= {0, 1}


def test_masks_behind_camera_and_subset(car):
    _, asset = car
    cams = [Camera.look_at([0, -7, 1.5], [0, 0, 0.5], 48, 32), Camera.look_at([0, 0, -20], [0, 0, -30], 48, 32)]
    masks = make_part_masks(asset, cameras=cams)
    whole = render(asset, cams[0]).alpha
    union = np.zeros_like(whole, dtype=bool)
    for stack in masks.values():
        assert not stack[1].any()
        union |= stack[0].astype(bool)
    assert union.any()
    assert not np.any(union & (whole == 0))


def test_masks_errors():
    a = splat([0, 0, 0], labels=[PartLabel.Body])
    with pytest.raises(AssetError, match="WheelRR"):
        make_part_masks(a, [PartLabel.WheelRR], [axis_camera()])
    with pytest.raises(ValueError):
        make_part_masks(a, [PartLabel.Body], [axis_camera()], 1.0)
    with pytest.raises(AssetError):
        make_part_masks(splat([0, 0, 0]), [PartLabel.Body], [axis_camera()])
