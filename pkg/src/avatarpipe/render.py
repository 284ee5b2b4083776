"""Differentiable weak-perspective rasterizer with SH-9 Lambertian shading.

Camera model: a vertex v is rotated by the axis-angle ``rotation``, scaled
and shifted in the plane, so its image position is
``scale * (R v)_xy + translation`` with depth ``(R v)_z``. The camera looks
down +z: smaller depth is nearer, and a triangle is front-facing when its
camera-space normal has negative z (equivalently negative screen-space
signed area). Image x is the column, y the row, pixel centers at
integer + 0.5; nothing is flipped.

The backward pass follows the interior-gradient convention: per-pixel
triangle assignment and coverage are treated as constant, gradients flow
through shading, the normal field, UV sampling, barycentric weights and the
projection. Silhouette/occupancy terms are dropped by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assets import Image, Mesh, UVMap
from .errors import DimensionError, ValidationError
from .sampling import bilinear_sample, bilinear_sample_vjp

BACKGROUND = 0.5
DEPTH_SENTINEL = np.inf
TRIANGLE_SENTINEL = -1

# real spherical harmonics constants, bands 0..2,
# ordered (1; y, z, x; xy, yz, 3z^2-1, xz, x^2-y^2)
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = 1.0925484305920792
_C3 = 0.31539156525252005
_C4 = 0.5462742152960396


# ---------------------------------------------------------------------------
# rotations


def _hat(v):
    """Skew matrix ~ cross product, for a single 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_matrix(omega) -> np.ndarray:
    """Rodrigues formula for an axis-angle 3-vector, series-safe near zero."""
    omega = np.asarray(omega, dtype=np.float64).ravel()
    theta2 = float(omega @ omega)
    K = _hat(omega)
    if theta2 < 1e-16:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def _left_jacobian(omega) -> np.ndarray:
    """d(rotation) / d(axis-angle) helper: exp((w+d)^) ~ exp((J_l d)^) exp(w^)."""
    omega = np.asarray(omega, dtype=np.float64).ravel()
    theta2 = float(omega @ omega)
    K = _hat(omega)
    if theta2 < 1e-16:
        b = 0.5 - theta2 / 24.0
        c = 1.0 / 6.0 - theta2 / 120.0
    else:
        theta = np.sqrt(theta2)
        b = (1.0 - np.cos(theta)) / theta2
        c = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) + b * K + c * (K @ K)


def rotate(omega, points) -> np.ndarray:
    """Apply the axis-angle rotation to points of shape (N, 3)."""
    return points @ rotation_matrix(omega).T


def rotate_vjp(omega, points, g_rotated):
    """Backward of :func:`rotate`.

    Given the gradient w.r.t. the rotated points, returns
    (g_omega (3,), g_points (N, 3)).
    """
    R = rotation_matrix(omega)
    rotated = points @ R.T
    g_points = g_rotated @ R
    # d(Rv)/dw = -[Rv]_x J_l(w), so the pullback is J_l^T sum(Rv x g)
    g_omega = _left_jacobian(omega).T @ np.cross(rotated, g_rotated).sum(axis=0)
    return g_omega, g_points


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class CameraParams:
    """Weak-perspective camera: axis-angle rotation, 2D pixel translation,
    positive isotropic scale."""

    rotation: np.ndarray     # (3,)
    translation: np.ndarray  # (2,)
    scale: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).ravel()
        self.translation = np.asarray(self.translation, dtype=np.float64).ravel()
        self.scale = float(self.scale)
        if self.rotation.shape != (3,):
            raise DimensionError("rotation must be a 3-vector (axis-angle)")
        if self.translation.shape != (2,):
            raise DimensionError("translation must be a 2-vector (pixels)")
        if not self.scale > 0:
            raise ValidationError(f"camera scale must be positive, got {self.scale}")


@dataclass
class Illumination:
    """9 spherical-harmonics coefficients per color channel, shape (3, 9)."""

    sh_coefficients: np.ndarray

    def __post_init__(self):
        self.sh_coefficients = np.asarray(self.sh_coefficients, dtype=np.float64)
        if self.sh_coefficients.shape != (3, 9):
            raise DimensionError(
                f"sh_coefficients must be (3, 9), got {self.sh_coefficients.shape}"
            )

    @classmethod
    def ambient(cls, value=1.0) -> "Illumination":
        """Constant irradiance ``value`` for every normal direction."""
        sh = np.zeros((3, 9))
        sh[:, 0] = value / _C0
        return cls(sh)


@dataclass
class RenderOutput:
    """Forward rasterization buffers.

    ``coverage`` is 1 exactly where ``triangle_id`` is not the sentinel;
    uncovered pixels carry depth +inf and zero barycentrics. The projected /
    camera-space arrays are cached forward state consumed by
    :func:`render_backward` and the unwrapper.
    """

    color: Image
    coverage: np.ndarray      # (H, W) 0/1
    depth: np.ndarray         # (H, W), +inf where uncovered
    triangle_id: np.ndarray   # (H, W) int32, -1 where uncovered
    barycentrics: np.ndarray  # (H, W, 3)
    camera: CameraParams
    projected: np.ndarray = None          # (V, 2) screen positions
    cam_vertices: np.ndarray = None       # (V, 3)
    cam_normals: np.ndarray = None        # (V, 3) unit, camera space

    @property
    def width(self):
        return self.coverage.shape[1]

    @property
    def height(self):
        return self.coverage.shape[0]


@dataclass
class CameraGradients:
    rotation: np.ndarray     # (3,)
    translation: np.ndarray  # (2,)
    scale: float


@dataclass
class RenderGradients:
    vertices: np.ndarray   # (V, 3) model space
    texture: np.ndarray    # (uv_h, uv_w, 3)
    sh: np.ndarray         # (3, 9)
    camera: CameraGradients


# ---------------------------------------------------------------------------
# geometry helpers


def project(vertices, camera: CameraParams):
    """Project model-space points; returns (screen (N,2), depth (N,))."""
    cam_pts = rotate(camera.rotation, np.asarray(vertices, dtype=np.float64))
    screen = camera.scale * cam_pts[:, :2] + camera.translation
    return screen, cam_pts[:, 2]


def vertex_normals(vertices, triangles) -> np.ndarray:
    """Area-weighted vertex normals: per-face cross products scattered to
    corners and normalized. Isolated vertices get +z."""
    vertices = np.asarray(vertices, dtype=np.float64)
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    face = np.cross(p1 - p0, p2 - p0)
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, triangles[:, k], face)
    norm = np.linalg.norm(acc, axis=1)
    out = np.where(norm[:, None] > 1e-20, acc / np.maximum(norm, 1e-20)[:, None], 0.0)
    out[norm <= 1e-20] = (0.0, 0.0, 1.0)
    return out


def sh_basis(n) -> np.ndarray:
    """Evaluate the 9 real SH basis functions at unit normals (N, 3)."""
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    one = np.ones_like(x)
    return np.stack([
        _C0 * one,
        _C1 * y,
        _C1 * z,
        _C1 * x,
        _C2 * x * y,
        _C2 * y * z,
        _C3 * (3.0 * z * z - 1.0),
        _C2 * x * z,
        _C4 * (x * x - y * y),
    ], axis=1)


def sh_basis_grad(n) -> np.ndarray:
    """Jacobian of :func:`sh_basis` w.r.t. the normal, shape (N, 9, 3)."""
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    rows = [
        (zero, zero, zero),
        (zero, _C1 * one, zero),
        (zero, zero, _C1 * one),
        (_C1 * one, zero, zero),
        (_C2 * y, _C2 * x, zero),
        (zero, _C2 * z, _C2 * y),
        (zero, zero, _C3 * 6.0 * z),
        (_C2 * z, zero, _C2 * x),
        (_C4 * 2.0 * x, -_C4 * 2.0 * y, zero),
    ]
    return np.stack([np.stack(r, axis=1) for r in rows], axis=1)


def irradiance(normals, illumination: Illumination) -> np.ndarray:
    """Per-channel irradiance for unit normals (N, 3) -> (N, 3)."""
    return sh_basis(normals) @ illumination.sh_coefficients.T


# ---------------------------------------------------------------------------
# rasterization core

_AREA_EPS = 1e-12
_MAX_CELLS = 3_000_000  # pixel x triangle work arrays stay under this


def raster_core(corners, depths, width, height, cull_backfaces=True):
    """Scan-convert triangles given 2D corner positions.

    Parameters
    ----------
    corners : (T, 3, 2) screen positions of each triangle's corners.
    depths : (T, 3) per-corner depth, interpolated for the z-test.
    cull_backfaces : drop triangles with non-negative signed area when True,
        keep both orientations (non-degenerate) when False.

    Returns
    -------
    triangle_id (H, W) int32, barycentrics (H, W, 3), depth (H, W).
    Nearest (smallest interpolated depth) triangle wins; exact ties go to the
    lowest triangle index, so the result is deterministic.
    """
    corners = np.asarray(corners, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    tri_id = np.full((height, width), TRIANGLE_SENTINEL, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.full((height, width), DEPTH_SENTINEL, dtype=np.float64)

    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    if cull_backfaces:
        keep = area < -_AREA_EPS
    else:
        keep = np.abs(area) > _AREA_EPS
    keep_idx = np.nonzero(keep)[0]
    if keep_idx.size == 0:
        return tri_id, bary, zbuf

    ys = corners[keep_idx, :, 1]
    y_lo = np.clip(np.floor(ys.min(axis=1) - 0.5).astype(np.int64), 0, height - 1)
    y_hi = np.clip(np.ceil(ys.max(axis=1) - 0.5).astype(np.int64), 0, height - 1)

    band_h = 32
    for band_start in range(0, height, band_h):
        band_end = min(band_start + band_h, height)
        in_band = keep_idx[(y_lo <= band_end - 1) & (y_hi >= band_start)]
        if in_band.size == 0:
            continue
        rows = np.arange(band_start, band_end)
        cols = np.arange(width)
        py = (rows[:, None] + 0.5).repeat(width, axis=1).ravel()
        px = (cols[None, :] + 0.5).repeat(band_end - band_start, axis=0).ravel()
        npix = px.size
        chunk = max(1, _MAX_CELLS // max(npix, 1))
        for s in range(0, in_band.size, chunk):
            tids = in_band[s:s + chunk]
            ax, ay = a[tids, 0], a[tids, 1]
            ux = b[tids, 0] - ax
            uy = b[tids, 1] - ay
            wx = c[tids, 0] - ax
            wy = c[tids, 1] - ay
            det = area[tids]
            ex = px[:, None] - ax[None, :]
            ey = py[:, None] - ay[None, :]
            b1 = (ex * wy[None, :] - ey * wx[None, :]) / det[None, :]
            b2 = (ux[None, :] * ey - uy[None, :] * ex) / det[None, :]
            b0 = 1.0 - b1 - b2
            inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
            z = (b0 * depths[tids, 0][None, :] + b1 * depths[tids, 1][None, :]
                 + b2 * depths[tids, 2][None, :])
            z = np.where(inside, z, np.inf)
            local = np.argmin(z, axis=1)
            pick = np.arange(npix)
            zbest = z[pick, local]
            hit = np.isfinite(zbest)
            if not hit.any():
                continue
            flat = (py - 0.5).astype(np.int64) * width + (px - 0.5).astype(np.int64)
            flat = flat[hit]
            zb = zbuf.ravel()
            better = zbest[hit] < zb[flat]
            if not better.any():
                continue
            sel = np.nonzero(hit)[0][better]
            flat = flat[better]
            zb[flat] = zbest[sel]
            tri_id.ravel()[flat] = tids[local[sel]].astype(np.int32)
            bary.reshape(-1, 3)[flat, 0] = b0[sel, local[sel]]
            bary.reshape(-1, 3)[flat, 1] = b1[sel, local[sel]]
            bary.reshape(-1, 3)[flat, 2] = b2[sel, local[sel]]
    return tri_id, bary, zbuf


def rasterize(mesh: Mesh, camera: CameraParams, width, height) -> RenderOutput:
    """Rasterize a mesh; fills geometry buffers, leaves color at background."""
    cam_pts = rotate(camera.rotation, mesh.vertices)
    screen = camera.scale * cam_pts[:, :2] + camera.translation
    normals = vertex_normals(cam_pts, mesh.triangles)
    tri = mesh.triangles
    tri_id, bary, zbuf = raster_core(screen[tri], cam_pts[:, 2][tri], width, height,
                                     cull_backfaces=True)
    coverage = (tri_id != TRIANGLE_SENTINEL).astype(np.float64)
    bg = np.full((height, width, 3), BACKGROUND, dtype=np.float64)
    return RenderOutput(
        color=Image.from_array(bg), coverage=coverage, depth=zbuf,
        triangle_id=tri_id, barycentrics=bary, camera=camera,
        projected=screen, cam_vertices=cam_pts, cam_normals=normals,
    )


# ---------------------------------------------------------------------------
# shading


def _texture_array(texture):
    if isinstance(texture, UVMap):
        return np.asarray(texture.color.data, dtype=np.float64)
    if isinstance(texture, Image):
        return np.asarray(texture.data, dtype=np.float64)
    arr = np.asarray(texture, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"texture must be (H, W, 3), got {arr.shape}")
    return arr


def _covered_state(raster: RenderOutput, mesh: Mesh, tex):
    """Gather per-covered-pixel interpolation state shared by shade/backward."""
    h, w = raster.coverage.shape
    flat_cov = np.nonzero(raster.coverage.ravel() > 0)[0]
    tids = raster.triangle_id.ravel()[flat_cov].astype(np.int64)
    bary = raster.barycentrics.reshape(-1, 3)[flat_cov]
    vid = mesh.triangles[tids]          # (N, 3)
    uvid = mesh.uv_triangles[tids]      # (N, 3)
    uvs = mesh.uv_coords[uvid]          # (N, 3, 2)
    uv = np.einsum("nk,nkj->nj", bary, uvs)
    th, tw = tex.shape[0], tex.shape[1]
    pos = uv * np.array([tw, th], dtype=np.float64)[None, :]
    nv = raster.cam_normals[vid]        # (N, 3, 3)
    m = np.einsum("nk,nkj->nj", bary, nv)
    mnorm = np.maximum(np.linalg.norm(m, axis=1), 1e-12)
    n = m / mnorm[:, None]
    return {
        "flat": flat_cov, "tids": tids, "bary": bary, "vid": vid, "uvid": uvid,
        "uvs": uvs, "uv": uv, "pos": pos, "nv": nv, "m": m, "mnorm": mnorm, "n": n,
    }


def shade(raster: RenderOutput, mesh: Mesh, texture, illumination: Illumination) -> Image:
    """Lambertian shading of a rasterized mesh.

    Per covered pixel: bilinear albedo at the interpolated UV, times the SH
    irradiance of the interpolated unit normal, clamped to [0,1]. Uncovered
    pixels take the constant background.
    """
    tex = _texture_array(texture)
    h, w = raster.coverage.shape
    out = np.full((h, w, 3), BACKGROUND, dtype=np.float64)
    st = _covered_state(raster, mesh, tex)
    if st["flat"].size:
        albedo = bilinear_sample(tex, st["pos"])
        irr = sh_basis(st["n"]) @ illumination.sh_coefficients.T
        out.reshape(-1, 3)[st["flat"]] = np.clip(albedo * irr, 0.0, 1.0)
    return Image.from_array(out)


def render_mesh(mesh: Mesh, texture, camera: CameraParams,
                illumination: Illumination, width, height) -> RenderOutput:
    """rasterize + shade in one call; the returned buffers carry the shaded color."""
    raster = rasterize(mesh, camera, width, height)
    raster.color = shade(raster, mesh, texture, illumination)
    return raster


# ---------------------------------------------------------------------------
# backward


def render_backward(raster: RenderOutput, mesh: Mesh, texture,
                    illumination: Illumination, output_gradient) -> RenderGradients:
    """Pull a per-pixel color gradient back to model inputs.

    Returns gradients w.r.t. model-space vertices, texture texels, SH
    coefficients and the camera. Coverage and per-pixel triangle assignment
    are frozen (interior-gradient convention); the clamp in shading passes
    gradient only where the pre-clamp color lies in [0,1].
    """
    tex = _texture_array(texture)
    grad = np.asarray(output_gradient, dtype=np.float64)
    if grad.shape != (raster.height, raster.width, 3):
        raise DimensionError(
            f"output_gradient shape {grad.shape} must be (H, W, 3)"
        )
    V = mesh.vertices.shape[0]
    g_vert_cam = np.zeros((V, 3))
    g_tex = np.zeros_like(tex)
    g_sh = np.zeros((3, 9))
    g_screen = np.zeros((V, 2))
    g_nvert = np.zeros((V, 3))

    st = _covered_state(raster, mesh, tex)
    N = st["flat"].size
    if N:
        bary, n, m, mnorm = st["bary"], st["n"], st["m"], st["mnorm"]
        albedo = bilinear_sample(tex, st["pos"])
        Y = sh_basis(n)
        sh = illumination.sh_coefficients
        irr = Y @ sh.T
        pre = albedo * irr
        g_color = grad.reshape(-1, 3)[st["flat"]]
        g_color = np.where((pre >= 0.0) & (pre <= 1.0), g_color, 0.0)

        g_albedo = irr * g_color
        g_irr = albedo * g_color

        # SH coefficients and normals
        g_sh += g_irr.T @ Y
        dY = sh_basis_grad(n)                      # (N, 9, 3)
        g_n = np.einsum("nc,ck,nkj->nj", g_irr, sh, dY)
        g_m = (g_n - n * (n * g_n).sum(axis=1, keepdims=True)) / mnorm[:, None]
        g_bary = np.einsum("nkj,nj->nk", st["nv"], g_m)
        for k in range(3):
            np.add.at(g_nvert, st["vid"][:, k], bary[:, k, None] * g_m)

        # texture and UV position
        g_tex_scatter, g_pos = bilinear_sample_vjp(tex, st["pos"], g_albedo)
        g_tex += g_tex_scatter
        th, tw = tex.shape[0], tex.shape[1]
        g_uv = g_pos * np.array([tw, th], dtype=np.float64)[None, :]
        g_bary += np.einsum("nkj,nj->nk", st["uvs"], g_uv)

        # barycentric weights -> screen corner positions
        qa = raster.projected[st["vid"][:, 0]]
        qb = raster.projected[st["vid"][:, 1]]
        qc = raster.projected[st["vid"][:, 2]]
        rows = st["flat"] // raster.width
        cols = st["flat"] % raster.width
        p = np.stack([cols + 0.5, rows + 0.5], axis=1)
        g1 = g_bary[:, 1] - g_bary[:, 0]   # b0 = 1 - b1 - b2
        g2 = g_bary[:, 2] - g_bary[:, 0]
        _bary_corner_grads(p, qa, qb, qc, bary, g1, g2, st["vid"], g_screen)

        # screen -> camera space / camera params
    g_scale = float((g_screen * raster.cam_vertices[:, :2]).sum())
    g_trans = g_screen.sum(axis=0)
    g_vert_cam[:, :2] += raster.camera.scale * g_screen

    # vertex normals -> camera-space positions
    if N:
        _normal_chain(raster.cam_vertices, mesh.triangles, g_nvert, g_vert_cam)

    g_rot, g_vert_model = rotate_vjp(raster.camera.rotation, mesh.vertices, g_vert_cam)
    return RenderGradients(
        vertices=g_vert_model, texture=g_tex, sh=g_sh,
        camera=CameraGradients(rotation=g_rot, translation=g_trans, scale=g_scale),
    )


def _bary_corner_grads(p, qa, qb, qc, bary, g1, g2, vid, g_screen):
    """Accumulate d(loss)/d(screen corners) from barycentric-weight gradients.

    With D the signed area and n1, n2 the sub-area numerators of b1, b2,
    db/dq = (dn/dq - b * dD/dq) / D per corner.
    """
    u = qb - qa
    w = qc - qa
    e = p - qa
    D = (u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0])[:, None]
    b1 = bary[:, 1][:, None]
    b2 = bary[:, 2][:, None]

    # cross2(x, y) has dx = (y2, -y1), dy = (-x2, x1)
    dn1_da = np.stack([-w[:, 1] + e[:, 1], w[:, 0] - e[:, 0]], axis=1)
    dn1_dc = np.stack([-e[:, 1], e[:, 0]], axis=1)
    dn2_da = np.stack([-e[:, 1] + u[:, 1], e[:, 0] - u[:, 0]], axis=1)
    dn2_db = np.stack([e[:, 1], -e[:, 0]], axis=1)
    dD_da = np.stack([u[:, 1] - w[:, 1], w[:, 0] - u[:, 0]], axis=1)
    dD_db = np.stack([w[:, 1], -w[:, 0]], axis=1)
    dD_dc = np.stack([-u[:, 1], u[:, 0]], axis=1)

    g1c = g1[:, None]
    g2c = g2[:, None]
    ga = (g1c * (dn1_da - b1 * dD_da) + g2c * (dn2_da - b2 * dD_da)) / D
    gb = (g1c * (0.0 - b1 * dD_db) + g2c * (dn2_db - b2 * dD_db)) / D
    gc = (g1c * (dn1_dc - b1 * dD_dc) + g2c * (0.0 - b2 * dD_dc)) / D
    np.add.at(g_screen, vid[:, 0], ga)
    np.add.at(g_screen, vid[:, 1], gb)
    np.add.at(g_screen, vid[:, 2], gc)


def _normal_chain(cam_vertices, triangles, g_nvert, g_vert_cam):
    """Backprop area-weighted vertex normals to camera-space positions."""
    p0 = cam_vertices[triangles[:, 0]]
    p1 = cam_vertices[triangles[:, 1]]
    p2 = cam_vertices[triangles[:, 2]]
    u = p1 - p0
    w = p2 - p0
    face = np.cross(u, w)
    acc = np.zeros_like(cam_vertices)
    for k in range(3):
        np.add.at(acc, triangles[:, k], face)
    norm = np.maximum(np.linalg.norm(acc, axis=1), 1e-20)
    nhat = acc / norm[:, None]
    # through the normalization
    g_acc = (g_nvert - nhat * (nhat * g_nvert).sum(axis=1, keepdims=True)) / norm[:, None]
    g_face = g_acc[triangles[:, 0]] + g_acc[triangles[:, 1]] + g_acc[triangles[:, 2]]
    g_p1 = np.cross(w, g_face)
    g_p2 = np.cross(g_face, u)
    g_p0 = -g_p1 - g_p2
    np.add.at(g_vert_cam, triangles[:, 0], g_p0)
    np.add.at(g_vert_cam, triangles[:, 1], g_p1)
    np.add.at(g_vert_cam, triangles[:, 2], g_p2)
