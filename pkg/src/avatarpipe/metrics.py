"""Quality metrics: brightness symmetry, PSNR, SSIM.

The brightness symmetry error (BSE) scores how evenly a facial texture is
lit: heavily blur the luma plane, mirror it left-right, and take the mean
absolute difference. A perfectly evenly lit, left-right symmetric texture
scores 0; baked-in directional shading shows up as a large score.
"""

from __future__ import annotations

import numpy as np

from .assets import Image, UVMap
from .errors import DimensionError, ValidationError
from .imaging import gaussian_blur, separable_filter
from . import providers

# ITU-R BT.601 luma taps
_LUMA = np.array([0.299, 0.587, 0.114])


def _as_array(image):
    if isinstance(image, UVMap):
        return np.asarray(image.color.data, dtype=np.float64)
    if isinstance(image, Image):
        return np.asarray(image.data, dtype=np.float64)
    return np.asarray(image, dtype=np.float64)


def to_luma(image) -> np.ndarray:
    """Y = 0.299 R + 0.587 G + 0.114 B, (H, W). 1-channel input passes through."""
    arr = _as_array(image)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.shape[2] != 3:
        raise DimensionError(f"expected 1 or 3 channels, got {arr.shape[2]}")
    return arr @ _LUMA


def bse(texture, kernel_size: int = 55) -> float:
    """Brightness symmetry error of a 3-channel texture.

    mean |B(Y) - mirror(B(Y))| where B is a Gaussian blur with an explicit
    odd ``kernel_size`` (sigma = size/6) and the mirror flips left-right.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValidationError(f"kernel_size must be odd and positive, got {kernel_size}")
    arr = _as_array(texture)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"bse expects a 3-channel texture, got shape {arr.shape}")
    blurred = gaussian_blur(to_luma(arr), size=kernel_size)
    return float(np.abs(blurred - blurred[:, ::-1]).mean())


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range; +inf for
    identical inputs."""
    x = _as_array(a)
    y = _as_array(b)
    if x.shape != y.shape:
        raise DimensionError(f"psnr inputs differ in shape: {x.shape} vs {y.shape}")
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def ssim(a, b, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity with a Gaussian window, unit dynamic range.

    Local means/variances/covariance come from an 11-tap Gaussian
    (sigma 1.5, reflected borders); the map is averaged over all pixels and
    channels.
    """
    x = _as_array(a)
    y = _as_array(b)
    if x.shape != y.shape:
        raise DimensionError(f"ssim inputs differ in shape: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    if window_size < 1 or window_size % 2 == 0:
        raise ValidationError(f"window_size must be odd and positive, got {window_size}")
    c1 = k1 * k1
    c2 = k2 * k2
    radius = (window_size - 1) // 2
    taps = np.exp(-(np.arange(-radius, radius + 1) ** 2) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    blur = lambda arr: separable_filter(arr, taps)
    mu_x = blur(x)
    mu_y = blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def embedding_distance(command, path_a, path_b) -> float:
    """Squared L2 distance between provider embeddings of two raster files.

    Runs an external command with the shared line protocol: the two paths go
    in on stdin, one float vector per line comes back. Usable both for
    identity embedders and perceptual metrics that follow the protocol.
    """
    vectors = providers.run_provider(command, [str(path_a), str(path_b)])
    diff = vectors[0] - vectors[1]
    return float(diff @ diff)
