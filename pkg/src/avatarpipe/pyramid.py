"""Binomial Gaussian/Laplacian pyramids and detail-transfer blending.

The kernel everywhere is the 5-tap binomial (1,4,6,4,1)/16 with odd
reflection at the borders; downsampling keeps even samples (sizes round up),
upsampling is zero-insertion followed by the same blur at 4x gain, cropped
to the exact target size. Reconstruction inverts the Laplacian decomposition
bit-for-bit up to float roundoff because it reuses the same upsampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assets import Image, UVMap
from .errors import DimensionError, ValidationError
from .imaging import _convolve_axis

_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass
class Pyramid:
    """A stack of levels, finest first. ``kind`` is 'gaussian' or 'laplacian'."""

    levels: list
    kind: str

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplacian"):
            raise ValidationError(f"unknown pyramid kind {self.kind!r}")
        if not self.levels:
            raise ValidationError("pyramid must have at least one level")

    @property
    def depth(self):
        return len(self.levels)


def blur5(arr: np.ndarray) -> np.ndarray:
    """Separable binomial blur, reflected borders."""
    out = _convolve_axis(np.asarray(arr, dtype=np.float64), _BINOMIAL, axis=0)
    return _convolve_axis(out, _BINOMIAL, axis=1)


def downsample2(arr: np.ndarray) -> np.ndarray:
    """Blur then keep even-index samples; output dims are ceil(input/2)."""
    return blur5(arr)[::2, ::2]


def upsample2(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Zero-insert to double size, blur at 4x gain, crop to the target dims.

    The target must be what :func:`downsample2` would have shrunk, i.e.
    ceil(target/2) == input size.
    """
    h, w = arr.shape[:2]
    if math.ceil(target_h / 2) != h or math.ceil(target_w / 2) != w:
        raise DimensionError(
            f"cannot upsample {(h, w)} to {(target_h, target_w)}: not a ceil-half pair"
        )
    up_shape = (2 * h, 2 * w) + arr.shape[2:]
    up = np.zeros(up_shape, dtype=np.float64)
    up[::2, ::2] = arr
    out = _convolve_axis(up, 2.0 * _BINOMIAL, axis=0)
    out = _convolve_axis(out, 2.0 * _BINOMIAL, axis=1)
    return out[:target_h, :target_w]


def default_depth(height: int, width: int) -> int:
    """floor(log2(min dim)) - 1, never less than 1."""
    return max(1, int(math.floor(math.log2(min(height, width)))) - 1)


def _check_levels(arr, levels):
    if levels < 1:
        raise ValidationError(f"levels must be >= 1, got {levels}")
    if min(arr.shape[0], arr.shape[1]) < 2 ** levels:
        raise ValidationError(
            f"image {arr.shape[:2]} too small for {levels} levels "
            f"(coarsest level would drop below 2 pixels)"
        )


def gaussian_pyramid(image, levels: int) -> Pyramid:
    """G0 = image, G_{k+1} = downsample2(G_k)."""
    arr = np.asarray(image.data if isinstance(image, Image) else image, dtype=np.float64)
    _check_levels(arr, levels)
    out = [arr.copy()]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return Pyramid(levels=out, kind="gaussian")


def laplacian_pyramid(image, levels: int) -> Pyramid:
    """L_k = G_k - upsample2(G_{k+1}); the last level is the Gaussian base."""
    gauss = gaussian_pyramid(image, levels).levels
    out = []
    for k in range(levels - 1):
        g = gauss[k]
        out.append(g - upsample2(gauss[k + 1], g.shape[0], g.shape[1]))
    out.append(gauss[-1])
    return Pyramid(levels=out, kind="laplacian")


def reconstruct(pyramid: Pyramid) -> np.ndarray:
    """Invert :func:`laplacian_pyramid` exactly (same upsampler, so the
    telescoping sum cancels to float roundoff)."""
    if pyramid.kind != "laplacian":
        raise ValidationError("reconstruct expects a laplacian pyramid")
    acc = np.asarray(pyramid.levels[-1], dtype=np.float64)
    for detail in reversed(pyramid.levels[:-1]):
        acc = detail + upsample2(acc, detail.shape[0], detail.shape[1])
    return acc


# ---------------------------------------------------------------------------
# detail transfer


def _to_color_array(texture):
    if isinstance(texture, UVMap):
        return np.asarray(texture.color.data, dtype=np.float64)
    if isinstance(texture, Image):
        return np.asarray(texture.data, dtype=np.float64)
    return np.asarray(texture, dtype=np.float64)


def lp_blend(source, template, transfer_levels=None) -> UVMap:
    """Replace the template's fine detail with the source's.

    Both textures are decomposed with the default depth for their size; the
    output reconstructs from source levels 0..transfer_levels-1 and template
    levels from transfer_levels up. transfer_levels defaults to depth - 2
    (everything but the two coarsest levels comes from the source);
    transfer_levels = 0 returns the template unchanged. Validity is carried
    over from the source when it has one.
    """
    src = _to_color_array(source)
    tmp = _to_color_array(template)
    if src.shape != tmp.shape:
        raise DimensionError(f"source {src.shape} and template {tmp.shape} differ")
    depth = default_depth(src.shape[0], src.shape[1])
    if transfer_levels is None:
        transfer_levels = max(0, depth - 2)
    if not 0 <= transfer_levels <= depth - 1:
        raise ValidationError(
            f"transfer_levels must be in [0, {depth - 1}], got {transfer_levels}"
        )
    sp = laplacian_pyramid(src, depth).levels
    tp = laplacian_pyramid(tmp, depth).levels
    mixed = Pyramid(levels=sp[:transfer_levels] + tp[transfer_levels:], kind="laplacian")
    out = np.clip(reconstruct(mixed), 0.0, 1.0)
    if isinstance(source, UVMap):
        validity = source.validity.copy()
    else:
        validity = np.ones(out.shape[:2])
    return UVMap(color=Image.from_array(out), validity=validity)


def _decode_normals(arr):
    v = 2.0 * arr - 1.0
    norm = np.linalg.norm(v, axis=2, keepdims=True)
    v = np.where(norm > 1e-8, v / np.maximum(norm, 1e-8), 0.0)
    v[(norm <= 1e-8)[:, :, 0]] = (0.0, 0.0, 1.0)
    return v


def lp_blend_normal(source, template, transfer_levels=None) -> UVMap:
    """Detail transfer for tangent-space normal maps encoded as colors
    (n = 2c - 1): blend like :func:`lp_blend`, then renormalize the decoded
    vectors to unit length and re-encode."""
    blended = lp_blend(source, template, transfer_levels)
    v = _decode_normals(np.asarray(blended.color.data))
    encoded = (v + 1.0) / 2.0
    return UVMap(color=Image.from_array(encoded), validity=blended.validity)
