"""UV-space texture recovery: per-view unwrapping and multi-view blending.

Unwrapping walks every texel of the UV chart back onto the surface, projects
the surface point into the source image and samples it, weighting the result
by how frontally the surface faces the camera and by the segmentation mask.
Occluded or off-image texels get zero validity. Blending feathers the
per-view validities and takes the normalized weighted average, then fills
unobserved texels by diffusion from observed ones.
"""

from __future__ import annotations

import numpy as np

from .assets import Image, Mesh, UVMap
from .errors import DimensionError, ValidationError
from .imaging import gaussian_blur
from .render import CameraParams, raster_core, rasterize
from .sampling import bilinear_sample


def uv_rasterize(uv_coords, uv_triangles, height: int, width: int):
    """Scan-convert the UV chart onto a texel grid.

    Returns (triangle_id (H, W), barycentrics (H, W, 3)); both orientations
    of UV triangles are kept, depth ties resolve to the lowest face index.
    """
    corners = np.asarray(uv_coords, dtype=np.float64)[uv_triangles]
    corners = corners * np.array([width, height], dtype=np.float64)[None, None, :]
    depths = np.zeros((len(uv_triangles), 3))
    tri_id, bary, _ = raster_core(corners, depths, width=width, height=height,
                                  cull_backfaces=False)
    return tri_id, bary


def uv_coverage(uv_coords, uv_triangles, height: int, width: int) -> np.ndarray:
    """Boolean texel coverage of the UV layout."""
    tri_id, _ = uv_rasterize(uv_coords, uv_triangles, height, width)
    return tri_id >= 0


_OCCLUSION_EPS_SCALE = 1e-3


def unwrap(source: Image, mesh: Mesh, camera: CameraParams, mask=None,
           uv_resolution: int = 256) -> UVMap:
    """Pull one image back into UV space.

    Per covered texel: find the surface point via the UV barycentrics,
    project it, bilinearly sample the source color there, and score the
    sample with validity = max(0, -n_z) * mask value (facing term times the
    segmentation weight). Texels projecting outside the image, facing away,
    or buried behind the depth buffer (tolerance 1e-3 of the covered depth
    range) get validity 0.
    """
    if uv_resolution < 1:
        raise ValidationError(f"uv_resolution must be positive, got {uv_resolution}")
    src = np.asarray(source.data, dtype=np.float64)
    if source.channels != 3:
        raise ValidationError("unwrap expects a 3-channel source image")
    if mask is not None:
        if (mask.height, mask.width) != (source.height, source.width):
            raise DimensionError(
                f"mask {mask.height}x{mask.width} does not match "
                f"source {source.height}x{source.width}"
            )
        mask_arr = np.asarray(mask.data, dtype=np.float64)[:, :, 0]
    else:
        mask_arr = None

    res = uv_resolution
    tri_id, bary = uv_rasterize(mesh.uv_coords, mesh.uv_triangles, res, res)
    color = np.zeros((res, res, 3))
    validity = np.zeros((res, res))
    covered = np.nonzero(tri_id.ravel() >= 0)[0]
    if covered.size == 0:
        return UVMap(color=Image.from_array(color), validity=validity)

    raster = rasterize(mesh, camera, source.width, source.height)

    tids = tri_id.ravel()[covered].astype(np.int64)
    b = bary.reshape(-1, 3)[covered]
    vid = mesh.triangles[tids]
    pts_cam = np.einsum("nk,nkj->nj", b, raster.cam_vertices[vid])
    m = np.einsum("nk,nkj->nj", b, raster.cam_normals[vid])
    m /= np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)

    screen = camera.scale * pts_cam[:, :2] + camera.translation
    depth = pts_cam[:, 2]

    inside = ((screen[:, 0] >= 0.0) & (screen[:, 0] <= source.width)
              & (screen[:, 1] >= 0.0) & (screen[:, 1] <= source.height))
    facing = np.maximum(0.0, -m[:, 2])

    # depth-buffer visibility with a tolerance scaled to the depth spread
    cov = raster.coverage > 0
    if cov.any():
        zvals = raster.depth[cov]
        eps = _OCCLUSION_EPS_SCALE * max(zvals.max() - zvals.min(), 1e-12)
        px = np.clip(screen[:, 0].astype(np.int64), 0, source.width - 1)
        py = np.clip(screen[:, 1].astype(np.int64), 0, source.height - 1)
        zbuf = raster.depth[py, px]
        visible = depth <= zbuf + eps  # uncovered buffer is +inf: nothing in front
    else:
        visible = np.zeros(covered.size, dtype=bool)

    weight = facing * np.where(inside & visible, 1.0, 0.0)
    if mask_arr is not None:
        weight = weight * bilinear_sample(mask_arr, screen)
    sampled = bilinear_sample(src, screen)

    color.reshape(-1, 3)[covered] = sampled * (weight > 0)[:, None]
    validity.ravel()[covered] = weight
    return UVMap(color=Image.from_array(color), validity=validity)


def blend_multiview(maps, feather_sigma=None) -> UVMap:
    """Fuse per-view UV maps into one texture.

    Weights are the validities blurred with a Gaussian of sigma =
    resolution/64 (overridable), restricted to each view's seen texels;
    output color is the per-texel normalized weighted average, so it stays
    a convex combination of the colors the views actually observed.
    Texels whose total weight is below 1e-6 are filled by repeated 3x3
    averaging from filled neighbors until nothing changes. Output validity
    is min(1, sum of weights), kept strictly positive wherever any input has
    a seen texel (the feather's tail never truly reaches zero), so the fill
    survives the validity-0 color convention. Input order does not matter.
    """
    maps = list(maps)
    if not maps:
        raise ValidationError("blend_multiview needs at least one map")
    shape = (maps[0].color.height, maps[0].color.width)
    for m in maps:
        if (m.color.height, m.color.width) != shape:
            raise DimensionError("all UV maps must share one resolution")
        if m.color.channels != 3:
            raise ValidationError("blend_multiview expects 3-channel maps")
    if feather_sigma is None:
        feather_sigma = min(shape) / 64.0

    wsum = np.zeros(shape)
    acc = np.zeros(shape + (3,))
    for m in maps:
        w = gaussian_blur(m.validity, sigma=feather_sigma)
        # the feather smooths relative weights inside and across overlap
        # regions, but a view must never pull the average where it saw
        # nothing (its color there is black by convention)
        w = np.where(m.validity > 0.0, np.maximum(w, 0.0), 0.0)
        wsum += w
        acc += w[:, :, None] * np.asarray(m.color.data, dtype=np.float64)

    known = wsum >= 1e-6
    color = np.zeros(shape + (3,))
    color[known] = acc[known] / wsum[known][:, None]
    color = _inpaint(color, known)
    if any(np.any(m.validity > 0.0) for m in maps):
        # a Gaussian has unbounded support, so once any texel is seen every
        # feathered weight is strictly positive; the truncated kernel
        # collapses that tail to exact 0, which would black out the inpainted
        # fill under the validity-0 color convention
        wsum = np.maximum(wsum, 1e-30)
    validity = np.minimum(wsum, 1.0)
    return UVMap(color=Image.from_array(color), validity=validity)


def _inpaint(color, known, tol=1e-5, max_sweeps=500):
    """Fill unknown texels by repeated 3x3 averaging until stable.

    Seeds by marching the valid frontier inward, then keeps re-averaging the
    unknown texels (known ones pinned) until the largest per-sweep change
    drops below tol, i.e. the smooth fixed point of the averaging. Past tol
    only glacial very-low-frequency drift remains, orders of magnitude below
    an 8-bit quantum. A fully empty input stays black.
    """
    if known.all() or not known.any():
        return color.copy()
    color = color.copy()
    filled = known.copy()
    while True:
        unknown = ~filled
        if not unknown.any():
            break
        kf = filled.astype(np.float64)
        counts = _box3_sum(kf)
        frontier = unknown & (counts > 0)
        if not frontier.any():
            break
        sums = np.stack([_box3_sum(color[:, :, c] * kf) for c in range(3)], axis=2)
        color[frontier] = sums[frontier] / counts[frontier][:, None]
        filled |= frontier

    return _relax(color, known, tol, max_sweeps)


def _relax(color, known, tol, max_sweeps):
    """Drive the seeded fill to the 3x3-average fixed point.

    A half-resolution solve (recursive) supplies the low-frequency part of
    the answer cheaply; full-resolution sweeps then only have to clean up
    what the coarse grid cannot represent, so few are needed.
    """
    h, w = known.shape
    if min(h, w) >= 32 and (~known).any():
        he, we = h - h % 2, w - w % 2
        k4 = np.stack([known[0:he:2, 0:we:2], known[0:he:2, 1:we:2],
                       known[1:he:2, 0:we:2], known[1:he:2, 1:we:2]])
        c4 = np.stack([color[0:he:2, 0:we:2], color[0:he:2, 1:we:2],
                       color[1:he:2, 0:we:2], color[1:he:2, 1:we:2]])
        coarse_known = k4.any(axis=0)
        seen = (c4 * k4[:, :, :, None]).sum(axis=0) \
            / np.maximum(k4.sum(axis=0), 1)[:, :, None]
        coarse = np.where(coarse_known[:, :, None], seen, c4.mean(axis=0))
        coarse = _relax(coarse, coarse_known, tol, max_sweeps)
        up = _upsample2_bilinear(coarse)
        if up.shape[0] < h:
            up = np.concatenate([up, up[-1:]], axis=0)
        if up.shape[1] < w:
            up = np.concatenate([up, up[:, -1:]], axis=1)
        color = np.where(known[:, :, None], color, up)

    unknown = ~known
    counts = _box3_sum(np.ones(known.shape))
    for _ in range(max_sweeps):
        sums = np.stack([_box3_sum(color[:, :, c]) for c in range(3)], axis=2)
        new = sums[unknown] / counts[unknown][:, None]
        delta = float(np.abs(new - color[unknown]).max()) if new.size else 0.0
        color[unknown] = new
        if delta < tol:
            break
    return color


def _upsample2_bilinear(arr):
    """2x bilinear upsampling for center-aligned texel grids, edge-clamped."""
    p = np.pad(arr, ((1, 1), (1, 1), (0, 0)), mode="edge")
    c = p[1:-1, 1:-1]
    n, s = p[:-2, 1:-1], p[2:, 1:-1]
    w_, e = p[1:-1, :-2], p[1:-1, 2:]
    nw, ne = p[:-2, :-2], p[:-2, 2:]
    sw, se = p[2:, :-2], p[2:, 2:]
    h, w = arr.shape[:2]
    out = np.empty((2 * h, 2 * w, arr.shape[2]), dtype=arr.dtype)
    out[0::2, 0::2] = (9 * c + 3 * n + 3 * w_ + nw) / 16.0
    out[0::2, 1::2] = (9 * c + 3 * n + 3 * e + ne) / 16.0
    out[1::2, 0::2] = (9 * c + 3 * s + 3 * w_ + sw) / 16.0
    out[1::2, 1::2] = (9 * c + 3 * s + 3 * e + se) / 16.0
    return out


def _box3_sum(arr):
    padded = np.pad(arr, 1, mode="constant")
    out = np.zeros_like(arr)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + arr.shape[0], dx:dx + arr.shape[1]]
    return out
