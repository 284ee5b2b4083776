"""Image-space operators and the webcam degradation chain.

All filters use odd reflection at the borders (no edge repetition) so that
constant images pass through exactly. Resampling is bilinear with half-texel
centers. The degradation chain runs blur -> bilinear downsample -> seeded
Gaussian noise -> non-local-means -> bilinear upsample back, in that order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .assets import Image
from .errors import ParseError, ValidationError
from .sampling import bilinear_sample


# ---------------------------------------------------------------------------
# padding / separable convolution


def _reflect_indices(n: int, pad: int) -> np.ndarray:
    """Index map implementing odd reflection (no edge repeat) for any pad."""
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    j = idx % period
    return np.where(j >= n, period - j, j)


def pad_reflect(arr: np.ndarray, pad: int, axes=(0, 1)) -> np.ndarray:
    out = arr
    for ax in axes:
        out = np.take(out, _reflect_indices(out.shape[ax], pad), axis=ax)
    return out


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    if radius == 0:
        return arr * kernel[0]
    padded = np.take(arr, _reflect_indices(arr.shape[axis], radius), axis=axis)
    moved = np.moveaxis(padded, axis, -1)
    windows = np.lib.stride_tricks.sliding_window_view(moved, len(kernel), axis=-1)
    out = windows @ kernel
    return np.moveaxis(out, -1, axis)


def separable_filter(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Apply a 1D kernel along rows then columns (channels untouched)."""
    out = _convolve_axis(np.asarray(arr, dtype=np.float64), kernel, axis=0)
    return _convolve_axis(out, kernel, axis=1)


def gaussian_kernel(sigma=None, size=None) -> np.ndarray:
    """1D normalized Gaussian taps.

    Either pass ``sigma`` (radius = ceil(3 sigma)) or an explicit odd
    ``size`` (then sigma = size / 6). sigma = 0 or size = 1 degenerates to
    the identity tap.
    """
    if (sigma is None) == (size is None):
        raise ValidationError("pass exactly one of sigma, size")
    if size is not None:
        if size < 1 or size % 2 == 0:
            raise ValidationError(f"kernel size must be odd and positive, got {size}")
        sigma = size / 6.0
        radius = (size - 1) // 2
    else:
        if sigma < 0:
            raise ValidationError(f"sigma must be non-negative, got {sigma}")
        radius = int(math.ceil(3.0 * sigma))
    if radius == 0 or sigma == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _as_array(image):
    if isinstance(image, Image):
        return np.asarray(image.data, dtype=np.float64), True
    return np.asarray(image, dtype=np.float64), False


def gaussian_blur(image, sigma=None, size=None):
    """Separable Gaussian blur with reflected borders.

    Accepts an Image or a bare (H, W[, C]) array and returns the same kind.
    sigma = 0 is the identity.
    """
    arr, was_image = _as_array(image)
    out = separable_filter(arr, gaussian_kernel(sigma=sigma, size=size))
    return Image.from_array(out) if was_image else out


# ---------------------------------------------------------------------------
# resampling


def resample(image, new_width: int, new_height: int):
    """Bilinear resample with half-texel-centered coordinates; same size in
    equals identity."""
    if new_width < 1 or new_height < 1:
        raise ValidationError("resample target must be at least 1x1")
    arr, was_image = _as_array(image)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    xs = (np.arange(new_width) + 0.5) * (w / new_width)
    ys = (np.arange(new_height) + 0.5) * (h / new_height)
    pos = np.stack([np.tile(xs, new_height), np.repeat(ys, new_width)], axis=1)
    out = bilinear_sample(arr, pos).reshape(new_height, new_width, arr.shape[2])
    if squeeze:
        out = out[:, :, 0]
    return Image.from_array(out) if was_image else out


# ---------------------------------------------------------------------------
# noise and denoising


def add_gaussian_noise(image, sigma: float, seed: int):
    """Add N(0, sigma^2) noise from a PCG64 stream, clamped back to [0,1]."""
    if sigma < 0:
        raise ValidationError(f"noise sigma must be non-negative, got {sigma}")
    arr, was_image = _as_array(image)
    rng = np.random.default_rng(seed)
    out = np.clip(arr + sigma * rng.standard_normal(arr.shape), 0.0, 1.0)
    return Image.from_array(out) if was_image else out


def _box_mean_valid(arr: np.ndarray, size: int) -> np.ndarray:
    """Mean over a size x size window, 'valid' extent (input pre-padded)."""
    win = np.lib.stride_tricks.sliding_window_view(arr, (size, size))
    return win.mean(axis=(-2, -1))


def nlm_denoise(image, strength: float, patch_radius: int = 1, search_radius: int = 5):
    """Non-local means.

    Every pixel is replaced by a weighted average over the (2*search_radius+1)^2
    candidate window, with weights exp(-max(0, d^2 - 2 sigma_n^2) / h^2) where
    d^2 is the mean squared difference between the (2*patch_radius+1)^2
    patches, h is ``strength`` and the noise floor sigma_n is taken as 0.
    strength -> 0 collapses the weights onto the pixel itself (identity),
    and strength = 0 is treated as exactly that.
    """
    if strength < 0:
        raise ValidationError(f"strength must be non-negative, got {strength}")
    arr, was_image = _as_array(image)
    if strength == 0:
        out = arr.copy()
        return Image.from_array(out) if was_image else out
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    pr, sr = patch_radius, search_radius
    padded = pad_reflect(arr, pr + sr)
    # image padded by the patch margin only, for 'valid' box means
    center = padded[sr:sr + h + 2 * pr, sr:sr + w + 2 * pr]
    acc = np.zeros((h, w, c))
    wsum = np.zeros((h, w))
    h2 = strength * strength
    for dy in range(-sr, sr + 1):
        for dx in range(-sr, sr + 1):
            shifted = padded[sr + dy:sr + dy + h + 2 * pr, sr + dx:sr + dx + w + 2 * pr]
            sq = ((center - shifted) ** 2).mean(axis=2)
            d2 = _box_mean_valid(sq, 2 * pr + 1)
            wgt = np.exp(-np.maximum(d2, 0.0) / h2)
            acc += wgt[:, :, None] * shifted[pr:pr + h, pr:pr + w]
            wsum += wgt
    out = acc / wsum[:, :, None]
    if squeeze:
        out = out[:, :, 0]
    return Image.from_array(out) if was_image else out


# ---------------------------------------------------------------------------
# the degradation chain


@dataclass
class DegradationParams:
    blur_sigma: float
    down_factor: float
    noise_sigma: float
    nlm_strength: float
    seed: int

    def __post_init__(self):
        if self.down_factor < 1:
            raise ValidationError(f"down_factor must be >= 1, got {self.down_factor}")


@dataclass
class DegradationRanges:
    """Uniform sampling ranges, loosely calibrated to cheap webcams."""

    blur_sigma: tuple = (0.5, 3.0)
    down_factor: tuple = (2.0, 4.0)
    noise_sigma: tuple = (0.005, 0.04)
    nlm_strength: tuple = (0.04, 0.12)

    def __post_init__(self):
        for name in ("blur_sigma", "down_factor", "noise_sigma", "nlm_strength"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValidationError(f"range {name} has hi < lo")


def default_params(seed: int = 0) -> DegradationParams:
    """Midpoint of the default ranges; handy as the documented default chain."""
    r = DegradationRanges()
    return DegradationParams(
        blur_sigma=sum(r.blur_sigma) / 2, down_factor=sum(r.down_factor) / 2,
        noise_sigma=sum(r.noise_sigma) / 2, nlm_strength=sum(r.nlm_strength) / 2,
        seed=seed,
    )


def sample_degradation(ranges: DegradationRanges, seed: int) -> DegradationParams:
    """Draw one parameter set; same seed, same draw."""
    rng = np.random.default_rng(seed)
    draw = lambda pair: float(rng.uniform(pair[0], pair[1]))
    return DegradationParams(
        blur_sigma=draw(ranges.blur_sigma),
        down_factor=draw(ranges.down_factor),
        noise_sigma=draw(ranges.noise_sigma),
        nlm_strength=draw(ranges.nlm_strength),
        seed=int(rng.integers(0, 2 ** 31)),
    )


def degrade(image, params: DegradationParams):
    """blur -> downsample -> noise -> NLM -> upsample back to input size."""
    arr, was_image = _as_array(image)
    h, w = arr.shape[:2]
    out = gaussian_blur(arr, sigma=params.blur_sigma)
    dw = max(1, int(round(w / params.down_factor)))
    dh = max(1, int(round(h / params.down_factor)))
    out = resample(out, dw, dh)
    out = add_gaussian_noise(out, params.noise_sigma, params.seed)
    out = nlm_denoise(out, params.nlm_strength)
    out = resample(out, w, h)
    return Image.from_array(out) if was_image else out


def load_degradation_ranges(path) -> DegradationRanges:
    """Read sampling ranges from a JSON file: {"blur_sigma": [lo, hi], ...}.
    Missing keys keep their defaults; unknown keys are an error."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=str(path))
    if not isinstance(raw, dict):
        raise ParseError("degradation config must be a JSON object", path=str(path))
    known = {"blur_sigma", "down_factor", "noise_sigma", "nlm_strength"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"{path}: unknown degradation keys {sorted(unknown)}")
    kwargs = {}
    for key, val in raw.items():
        if (not isinstance(val, (list, tuple)) or len(val) != 2
                or not all(isinstance(x, (int, float)) for x in val)):
            raise ValidationError(f"{path}: {key} must be a [lo, hi] pair")
        kwargs[key] = (float(val[0]), float(val[1]))
    return DegradationRanges(**kwargs)
