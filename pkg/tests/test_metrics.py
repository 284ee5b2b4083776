"""Luma, brightness symmetry, PSNR/SSIM, and provider-backed distances."""

import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avatarpipe.assets import Image, save_image
from avatarpipe.errors import DimensionError, ValidationError
from avatarpipe.metrics import bse, embedding_distance, psnr, ssim, to_luma

from oracle_helpers import bse_ref, luma_ref, psnr_ref, ssim_ref

# ---------------------------------------------------------------------------
# luma


def test_to_luma_primaries():
    white = np.ones((1, 1, 3))
    red = np.zeros((1, 1, 3))
    red[0, 0, 0] = 1.0
    green = np.zeros((1, 1, 3))
    green[0, 0, 1] = 1.0
    assert abs(to_luma(white)[0, 0] - 1.0) < 1e-12
    assert abs(to_luma(red)[0, 0] - 0.299) < 1e-12
    assert abs(to_luma(green)[0, 0] - 0.587) < 1e-12


def test_to_luma_matches_oracle(rng):
    arr = rng.random((7, 9, 3))
    np.testing.assert_allclose(to_luma(arr), luma_ref(arr), atol=1e-12)


def test_to_luma_passthrough_single_channel(rng):
    arr = rng.random((5, 5))
    np.testing.assert_array_equal(to_luma(arr), arr)


def test_to_luma_rejects_two_channels(rng):
    with pytest.raises(DimensionError):
        to_luma(rng.random((4, 4, 2)))


# ---------------------------------------------------------------------------
# brightness symmetry error


def test_bse_symmetric_texture_is_zero(rng):
    half = rng.random((64, 32, 3))
    tex = np.concatenate([half, half[:, ::-1]], axis=1)
    assert abs(bse(tex)) <= 1e-6


def test_bse_constant_is_zero():
    assert bse(np.full((64, 64, 3), 0.37)) == 0.0


def test_bse_matches_scalar_oracle(rng):
    tex = rng.random((48, 48, 3))
    ours = bse(tex, kernel_size=15)
    ref = bse_ref(tex, kernel_size=15)
    assert abs(ours - ref) < 1e-6


def test_bse_mirror_invariant(rng):
    tex = rng.random((32, 32, 3))
    assert abs(bse(tex) - bse(tex[:, ::-1])) < 1e-12


def test_bse_nonnegative_and_homogeneous(rng):
    tex = rng.random((32, 32, 3))
    value = bse(tex)
    assert value >= 0.0
    assert abs(bse(0.5 * tex) - 0.5 * value) < 1e-12


def test_bse_detects_lateral_ramp():
    ramp = np.linspace(0.2, 0.8, 64)[None, :, None] * np.ones((64, 1, 3))
    assert bse(ramp) > 0.05


def test_bse_rejects_even_kernel(rng):
    with pytest.raises(ValidationError):
        bse(rng.random((32, 32, 3)), kernel_size=4)


def test_bse_rejects_grayscale(rng):
    with pytest.raises(DimensionError):
        bse(rng.random((32, 32)))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_bse_symmetrization_never_increases(seed):
    rng = np.random.default_rng(seed)
    tex = rng.random((32, 32, 3))
    sym = (tex + tex[:, ::-1]) / 2
    assert bse(sym) <= bse(tex) + 1e-12


# ---------------------------------------------------------------------------
# PSNR


def test_psnr_identical_is_infinite(rng):
    arr = rng.random((8, 8, 3))
    assert psnr(arr, arr) == float("inf")


def test_psnr_constant_offset_exact():
    a = np.full((16, 16, 3), 0.4)
    b = np.full((16, 16, 3), 0.5)
    assert abs(psnr(a, b) - 20.0) < 1e-9  # mse 0.01 -> 20 dB


def test_psnr_symmetric_and_matches_oracle(rng):
    a, b = rng.random((9, 9, 3)), rng.random((9, 9, 3))
    assert abs(psnr(a, b) - psnr(b, a)) < 1e-12
    assert abs(psnr(a, b) - psnr_ref(a, b)) < 1e-9


def test_psnr_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        psnr(rng.random((4, 4)), rng.random((5, 4)))


# ---------------------------------------------------------------------------
# SSIM


def test_ssim_self_is_one(rng):
    arr = rng.random((24, 24, 3))
    assert abs(ssim(arr, arr) - 1.0) < 1e-9


def test_ssim_matches_oracle(rng):
    a = rng.random((20, 20))
    b = np.clip(a + rng.normal(size=(20, 20)) * 0.1, 0, 1)
    assert abs(ssim(a, b) - ssim_ref(a, b)) < 1e-6


def test_ssim_degrades_with_noise(rng):
    a = rng.random((24, 24, 3))
    small = np.clip(a + rng.normal(size=a.shape) * 0.02, 0, 1)
    large = np.clip(a + rng.normal(size=a.shape) * 0.2, 0, 1)
    assert ssim(a, large) < ssim(a, small) < 1.0


def test_ssim_rejects_even_window(rng):
    arr = rng.random((16, 16))
    with pytest.raises(ValidationError):
        ssim(arr, arr, window_size=10)


def test_ssim_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        ssim(rng.random((4, 4)), rng.random((5, 4)))


# ---------------------------------------------------------------------------
# provider-backed embedding distance


def test_embedding_distance_mean_color(tmp_path):
    script = tmp_path / "embed.py"
    script.write_text(textwrap.dedent("""
        import sys
        from PIL import Image
        import numpy as np
        for line in sys.stdin:
            path = line.strip()
            if not path:
                continue
            arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
            print(*arr.reshape(-1, 3).mean(axis=0))
    """))
    pa = tmp_path / "a.png"
    pb = tmp_path / "b.png"
    save_image(Image.from_array(np.full((4, 4, 3), 0.2)), pa)
    save_image(Image.from_array(np.full((4, 4, 3), 0.8)), pb)
    d = embedding_distance([sys.executable, str(script)], pa, pb)
    assert abs(d - 3 * 0.6 ** 2) < 1e-6
    assert embedding_distance([sys.executable, str(script)], pa, pa) == 0.0
