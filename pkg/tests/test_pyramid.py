"""Gaussian/Laplacian pyramids and detail-transfer blending."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avatarpipe.assets import Image, UVMap
from avatarpipe.errors import DimensionError, ValidationError
from avatarpipe.imaging import gaussian_blur
from avatarpipe.metrics import bse
from avatarpipe.pyramid import (default_depth, downsample2, gaussian_pyramid,
                                laplacian_pyramid, lp_blend, lp_blend_normal,
                                reconstruct, upsample2)


def _face_like(rng, size=64):
    """Smooth blotchy field, brighter in the middle, like a stylized albedo."""
    base = gaussian_blur(rng.random((size, size, 3)), sigma=size / 12)
    base = (base - base.min()) / (base.max() - base.min() + 1e-9)
    yy, xx = np.mgrid[0:size, 0:size]
    bump = np.exp(-(((yy - size / 2) ** 2 + (xx - size / 2) ** 2) / (size / 2.5) ** 2))
    return np.clip(0.25 + 0.5 * base + 0.2 * bump[:, :, None], 0, 1)


# ---------------------------------------------------------------------------
# construction


def test_default_depth():
    assert default_depth(256, 256) == 7
    assert default_depth(64, 64) == 5
    assert default_depth(8, 8) == 2
    assert default_depth(256, 64) == 5  # minimum dimension rules


def test_gaussian_pyramid_sizes():
    pyr = gaussian_pyramid(np.zeros((8, 8, 3)), 3)
    assert [lv.shape[:2] for lv in pyr.levels] == [(8, 8), (4, 4), (2, 2)]
    assert pyr.kind == "gaussian"


def test_gaussian_pyramid_constant_stays_constant(rng):
    pyr = gaussian_pyramid(np.full((16, 16, 3), 0.37), 4)
    for lv in pyr.levels:
        np.testing.assert_allclose(lv, 0.37, atol=1e-12)


def test_laplacian_pyramid_single_level_is_image(rng):
    img = rng.random((16, 16, 3))
    pyr = laplacian_pyramid(img, 1)
    assert len(pyr.levels) == 1
    np.testing.assert_allclose(pyr.levels[0], img, atol=1e-12)


def test_laplacian_constant_has_no_detail():
    pyr = laplacian_pyramid(np.full((32, 32, 3), 0.42), 4)
    for lv in pyr.levels[:-1]:
        np.testing.assert_allclose(lv, 0.0, atol=1e-12)
    np.testing.assert_allclose(pyr.levels[-1], 0.42, atol=1e-12)


def test_laplacian_base_is_gaussian_base(rng):
    img = rng.random((32, 32, 3))
    lp = laplacian_pyramid(img, 4)
    gp = gaussian_pyramid(img, 4)
    np.testing.assert_allclose(lp.levels[-1], gp.levels[-1], atol=1e-12)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10_000), depth=st.integers(1, 5),
       size_pow=st.integers(4, 6))
def test_reconstruct_inverts_laplacian(seed, depth, size_pow):
    rng = np.random.default_rng(seed)
    size = 2 ** size_pow
    depth = min(depth, size_pow)  # coarsest level must keep >= 2 pixels
    img = rng.random((size, size, 3))
    pyr = laplacian_pyramid(img, depth)
    back = reconstruct(pyr)
    assert np.abs(back - img).max() < 1e-5


def test_reconstruct_odd_sizes(rng):
    img = rng.random((50, 38, 3))
    back = reconstruct(laplacian_pyramid(img, 4))
    assert np.abs(back - img).max() < 1e-5


def test_laplacian_detail_energy_definition(rng):
    # each detail level is exactly gaussian[k] - upsample(gaussian[k+1])
    img = rng.random((32, 32, 3))
    lp = laplacian_pyramid(img, 4).levels
    gp = gaussian_pyramid(img, 4).levels
    for k in range(3):
        h, w = gp[k].shape[:2]
        expected = gp[k] - upsample2(gp[k + 1], h, w)
        np.testing.assert_allclose(lp[k], expected, atol=1e-10)


def test_downsample_halves_and_blurs():
    arr = np.zeros((8, 8))
    arr[4, 4] = 1.0
    small = downsample2(arr)
    assert small.shape == (4, 4)
    assert small.sum() > 0  # the impulse survives the blur + decimation


def test_pyramid_level_bounds(rng):
    img = rng.random((16, 16, 3))
    with pytest.raises(ValidationError):
        laplacian_pyramid(img, 0)
    with pytest.raises(ValidationError):
        laplacian_pyramid(img, 20)  # coarsest level would be empty


# ---------------------------------------------------------------------------
# detail transfer


def test_lp_blend_self_is_identity(rng):
    img = _face_like(rng)
    for t in (None, 1, 3):
        out = lp_blend(img, img, transfer_levels=t)
        assert np.abs(np.asarray(out.color.data) - img).max() < 1e-5


def test_lp_blend_zero_transfer_returns_template(rng):
    src = _face_like(rng)
    tmp = _face_like(np.random.default_rng(99))
    out = lp_blend(src, tmp, transfer_levels=0)
    assert np.abs(np.asarray(out.color.data) - tmp).max() < 1e-5


def test_lp_blend_low_frequencies_come_from_template(rng):
    src = _face_like(rng)
    tmp = _face_like(np.random.default_rng(99))
    out = np.asarray(lp_blend(src, tmp).color.data)
    # heavy blur isolates what the coarse levels own
    lo_out = gaussian_blur(out, sigma=16)
    lo_tmp = gaussian_blur(tmp, sigma=16)
    lo_src = gaussian_blur(src, sigma=16)
    err_tmp = np.abs(lo_out - lo_tmp).mean()
    err_src = np.abs(lo_out - lo_src).mean()
    assert err_tmp < err_src


def test_lp_blend_fine_detail_comes_from_source(rng):
    src = _face_like(rng).copy()
    # stamp a high-frequency checker into the source only
    checker = (np.indices((64, 64)).sum(axis=0) % 2)[:, :, None] * 0.08
    src = np.clip(src + checker, 0, 1)
    tmp = _face_like(np.random.default_rng(99))
    out = np.asarray(lp_blend(src, tmp).color.data)
    hi = lambda a: a - gaussian_blur(a, sigma=2)
    corr = float((hi(out) * hi(src)).sum())
    corr_tmp = float((hi(out) * hi(tmp)).sum())
    assert corr > 4 * abs(corr_tmp)


def test_lp_blend_reduces_brightness_asymmetry(rng):
    # asymmetric illumination ramp on the source, symmetric template
    base = _face_like(rng)
    ramp = np.linspace(0.7, 1.3, 64)[None, :, None]
    src = np.clip(base * ramp, 0, 1)
    tmp = (base + base[:, ::-1]) / 2  # mirror-symmetric by construction
    out = np.asarray(lp_blend(src, tmp).color.data)
    assert bse(out) < 0.5 * bse(src)


def test_lp_blend_carries_source_validity(rng):
    img = _face_like(rng)
    validity = (rng.random((64, 64)) > 0.3).astype(float)
    src = UVMap(color=Image.from_array(img * validity[:, :, None]), validity=validity)
    out = lp_blend(src, img)
    np.testing.assert_array_equal(out.validity, validity)


def test_lp_blend_errors(rng):
    img = _face_like(rng)
    with pytest.raises(DimensionError):
        lp_blend(img, img[:32, :32])
    with pytest.raises(ValidationError):
        lp_blend(img, img, transfer_levels=default_depth(64, 64))
    with pytest.raises(ValidationError):
        lp_blend(img, img, transfer_levels=-1)


def test_lp_blend_output_in_range(rng):
    src = _face_like(rng) * 1.0
    tmp = _face_like(np.random.default_rng(7))
    out = np.asarray(lp_blend(src, tmp).color.data)
    assert out.min() >= 0.0 and out.max() <= 1.0


# ---------------------------------------------------------------------------
# normal-map variant


def _random_normal_map(rng, size=64):
    n = rng.normal(size=(size, size, 3))
    n[:, :, 2] = np.abs(n[:, :, 2]) + 1.0  # upward-facing hemisphere
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    return (n + 1.0) / 2.0  # encode to [0,1]


def test_lp_blend_normal_self_identity(rng):
    enc = _random_normal_map(rng)
    out = np.asarray(lp_blend_normal(enc, enc).color.data)
    dec = out * 2.0 - 1.0
    ref = enc * 2.0 - 1.0
    # unit length is re-imposed, so compare directions
    cos = (dec * ref).sum(axis=2) / np.linalg.norm(ref, axis=2)
    assert cos.min() > 0.999


def test_lp_blend_normal_outputs_unit_vectors(rng):
    a = _random_normal_map(rng)
    b = _random_normal_map(np.random.default_rng(4))
    out = np.asarray(lp_blend_normal(a, b).color.data)
    dec = out * 2.0 - 1.0
    np.testing.assert_allclose(np.linalg.norm(dec, axis=2), 1.0, atol=1e-4)


def test_lp_blend_normal_zero_transfer(rng):
    a = _random_normal_map(rng)
    b = _random_normal_map(np.random.default_rng(4))
    out = np.asarray(lp_blend_normal(a, b, transfer_levels=0).color.data)
    dec = out * 2.0 - 1.0
    ref = b * 2.0 - 1.0
    ref /= np.linalg.norm(ref, axis=2, keepdims=True)
    cos = (dec * ref).sum(axis=2)
    assert cos.min() > 0.999
