"""Deterministic synthetic data: a toy morphable model and multi-view
captures rendered from known ground truth.

Everything here is seeded, so the full test/acceptance suite runs with zero
external data. The toy head is a deformed lat-long sphere (front of the face
at the center of the UV chart, seam at the back of the head), with smooth
random orthonormal shape/expression/texture bases.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .assets import (Image, LandmarkSet, MorphableModel, save_image,
                     save_landmarks, save_mesh, save_model)
from .errors import ValidationError
from .fit import FitView
from .morphable import ShapeParams, decode_shape
from .render import (CameraParams, Illumination, _C0, _C1, project,
                     render_mesh, rotate, vertex_normals)
from .uvtex import uv_rasterize


# ---------------------------------------------------------------------------
# toy morphable model

_HEAD_AXES = np.array([0.78, 1.05, 0.92])


def _sphere_grid(rings, columns):
    """Unit directions on a pole-free lat-long grid. Longitude pi (the chart
    center) faces -z, toward the default camera; the seam sits at the back."""
    i = np.arange(rings)
    j = np.arange(columns)
    phi = np.pi * (i + 1) / (rings + 1)          # latitude, poles excluded
    lam = 2.0 * np.pi * j / columns              # longitude, seam at 0
    phi, lam = np.meshgrid(phi, lam, indexing="ij")
    dirs = np.stack([np.sin(phi) * np.sin(lam),
                     np.cos(phi),
                     np.sin(phi) * np.cos(lam)], axis=-1)
    return dirs.reshape(-1, 3), phi.reshape(-1), lam.reshape(-1)


def _smooth_vertex_field(rng, dirs, n_bumps=6, width=0.18):
    """Random smooth displacement field: a few wide cosine-distance bumps,
    each carrying a random 3-vector amplitude."""
    field = np.zeros((dirs.shape[0], 3))
    for _ in range(n_bumps):
        center = rng.normal(size=3)
        center /= np.linalg.norm(center)
        amp = rng.normal(size=3)
        kernel = np.exp((dirs @ center - 1.0) / width)
        field += kernel[:, None] * amp
    return field.reshape(-1)


def _smooth_texture_field(rng, height, width, n_bumps=8, sigma_frac=0.15):
    field = np.zeros((height, width, 3))
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width),
                         indexing="ij")
    for _ in range(n_bumps):
        cy, cx = rng.uniform(0, 1, size=2)
        amp = rng.normal(size=3)
        k = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma_frac ** 2))
        field += k[:, :, None] * amp
    return field.reshape(-1)


def _orthonormal_columns(raw):
    q, r = np.linalg.qr(raw)
    return q * np.sign(np.diag(r))  # deterministic column signs


def _remove_affine_modes(raw, positions):
    """Project global affine deformation fields out of basis columns.

    Scan-built morphable bases carry no rigid/similarity component (scans are
    aligned first); random smooth fields do, and any such component lets shape
    coefficients imitate camera moves, making the fit ill-conditioned. Remove
    the span of all 12 affine generators evaluated on the mean shape.
    """
    n = positions.shape[0]
    gens = []
    for axis in range(3):                      # translations
        g = np.zeros((n, 3))
        g[:, axis] = 1.0
        gens.append(g.reshape(-1))
    for row in range(3):                       # linear maps (scale/rot/shear)
        for col in range(3):
            g = np.zeros((n, 3))
            g[:, row] = positions[:, col]
            gens.append(g.reshape(-1))
    a = np.stack(gens, axis=1)
    coeffs, *_ = np.linalg.lstsq(a, raw, rcond=None)
    return raw - a @ coeffs


def toy_model(seed=0, uv_resolution=256, rings=20, columns=25,
              num_identity=8, num_expression=4, num_texture=8,
              num_landmarks=105) -> MorphableModel:
    """Build the deterministic toy head model.

    Mean shape: lat-long ellipsoid with a nose bump on the -z (camera-facing)
    side. Bases are orthonormalized smooth random fields with global affine
    modes projected out (see _remove_affine_modes); identity columns have
    norm 0.20*sqrt(V), expression 0.04*sqrt(V), texture columns have
    per-entry RMS 0.04. Landmarks are front (z<0) vertices at a regular
    stride.
    """
    rng = np.random.default_rng(seed)
    dirs, phi, lam = _sphere_grid(rings, columns)
    n_vertices = rings * columns

    vertices = dirs * _HEAD_AXES
    # nose: narrow bump straight toward the camera, centered on the front
    nose = np.exp(-(((phi - np.pi / 2) ** 2) + (lam - np.pi) ** 2) / (2 * 0.22 ** 2))
    vertices[:, 2] -= 0.22 * nose

    # grid triangulation, wrapping columns; winding fixed to outward normals
    tris, uv_tris = [], []
    for i in range(rings - 1):
        for j in range(columns):
            j2 = (j + 1) % columns
            a, b = i * columns + j, i * columns + j2
            c, d = (i + 1) * columns + j, (i + 1) * columns + j2
            ua, ub = i * (columns + 1) + j, i * (columns + 1) + j + 1
            uc, ud = (i + 1) * (columns + 1) + j, (i + 1) * (columns + 1) + j + 1
            tris += [[a, c, b], [b, c, d]]
            uv_tris += [[ua, uc, ub], [ub, uc, ud]]
    tris = np.asarray(tris, dtype=np.int64)
    uv_tris = np.asarray(uv_tris, dtype=np.int64)
    corners = vertices[tris]
    face_n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    outward = dirs[tris].mean(axis=1)
    flip = np.einsum("ij,ij->i", face_n, outward) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    uv_tris[flip] = uv_tris[flip][:, [0, 2, 1]]

    # UV chart: the seam column is duplicated so u spans [0,1] without wrap
    ui = np.arange(rings) / (rings - 1)
    uj = np.arange(columns + 1) / columns
    uu, vv = np.meshgrid(uj, ui, indexing="xy")
    uv_coords = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=-1)

    # landmarks: evenly strided front vertices
    front = np.flatnonzero(vertices[:, 2] < -0.05)
    if len(front) < num_landmarks:
        raise ValidationError(
            f"only {len(front)} front vertices for {num_landmarks} landmarks")
    pick = np.round(np.linspace(0, len(front) - 1, num_landmarks)).astype(np.int64)
    landmark_ids = front[pick]
    assert len(np.unique(landmark_ids)) == num_landmarks

    id_raw = np.stack([_smooth_vertex_field(rng, dirs) for _ in range(num_identity)], axis=1)
    id_raw = _remove_affine_modes(id_raw, vertices)
    identity_basis = _orthonormal_columns(id_raw) * (0.20 * np.sqrt(n_vertices))
    exp_raw = np.stack([_smooth_vertex_field(rng, dirs) for _ in range(num_expression)], axis=1)
    exp_raw = _remove_affine_modes(exp_raw, vertices)
    expression_basis = _orthonormal_columns(exp_raw) * (0.04 * np.sqrt(n_vertices))

    h = w = uv_resolution
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    mean_texture = np.empty((h, w, 3))
    mean_texture[:] = (0.72, 0.55, 0.45)
    for _ in range(4):
        fy, fx = rng.uniform(0.5, 3.0, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        amp = rng.uniform(-0.05, 0.05, size=3)
        wave = np.cos(2 * np.pi * fy * yy + py) * np.cos(2 * np.pi * fx * xx + px)
        mean_texture += wave[:, :, None] * amp
    detail = rng.normal(0.0, 1.0, size=(h, w, 3))
    from .imaging import gaussian_blur
    detail = gaussian_blur(detail, sigma=0.8)
    mean_texture += 0.035 * detail / max(detail.std(), 1e-12)
    mean_texture = np.clip(mean_texture, 0.1, 0.95)

    tex_raw = np.stack([_smooth_texture_field(rng, h, w) for _ in range(num_texture)], axis=1)
    texture_basis = _orthonormal_columns(tex_raw) * (0.04 * np.sqrt(h * w * 3))

    return MorphableModel(
        mean_shape=vertices, identity_basis=identity_basis,
        expression_basis=expression_basis, mean_texture=mean_texture,
        texture_basis=texture_basis, landmark_vertex_ids=landmark_ids,
        triangles=tris, uv_coords=uv_coords, uv_triangles=uv_tris,
    )


# ---------------------------------------------------------------------------
# synthetic captures


def directional_illumination(ambient=0.8, strength=0.5,
                             direction=(-0.5, -0.2, -0.8)) -> Illumination:
    """Ambient plus a linear-band term so irradiance = ambient + strength *
    dot(light_dir, normal): deliberately left/right asymmetric lighting."""
    light = np.asarray(direction, dtype=np.float64)
    light = light / np.linalg.norm(light)
    sh = np.zeros((3, 9))
    sh[:, 0] = ambient / _C0
    sh[:, 1] = strength * light[1] / _C1
    sh[:, 2] = strength * light[2] / _C1
    sh[:, 3] = strength * light[0] / _C1
    return Illumination(sh)


@dataclass
class CaptureSet:
    """Ground truth plus rendered observations for fitting tests."""

    model: MorphableModel
    identity: np.ndarray
    texture: np.ndarray
    expressions: list          # per-view coefficient vectors
    views: list                # of FitView
    view_params: list          # ground-truth ViewParams equivalents
    images: list               # rendered Image per view (same as views[i].image)


def synthetic_capture(model: MorphableModel, seed=0, image_size=96,
                      yaws=(-0.45, 0.0, 0.45), directional=False,
                      fill=0.62, symmetric_albedo=False) -> CaptureSet:
    """Render left/front/right views of a random ground-truth head.

    Cameras are auto-framed: scale fills `fill` of the image with the rotated
    head, translation centers it. Landmarks are the projected ground-truth
    landmark vertices at confidence 1; the mask is the render's coverage.
    With symmetric_albedo the rendered albedo is mirror-averaged first, so
    any left/right brightness difference in the views comes from the
    illumination alone.
    """
    from .fit import ViewParams  # local: fit imports nothing from here

    rng = np.random.default_rng(seed)
    identity = rng.uniform(-0.5, 0.5, model.num_identity)
    texture = rng.uniform(-0.5, 0.5, model.num_texture)

    tex_arr = np.clip(
        (model.mean_texture.reshape(-1) + model.texture_basis @ texture)
        .reshape(model.mean_texture.shape), 0.0, 1.0)
    if symmetric_albedo:
        tex_arr = symmetrize(tex_arr)

    if directional:
        illum = directional_illumination()
    else:
        illum = Illumination.ambient(0.85)

    views, params, expressions, images = [], [], [], []
    for yaw in yaws:
        expr = rng.uniform(-0.2, 0.2, model.num_expression)
        mesh = decode_shape(model, ShapeParams(identity=identity, expression=expr))
        omega = np.array([0.0, yaw, 0.0])
        cam_xy = rotate(omega, mesh.vertices)[:, :2]
        extent = float((cam_xy.max(axis=0) - cam_xy.min(axis=0)).max())
        scale = fill * image_size / extent
        translation = image_size / 2.0 - scale * cam_xy.mean(axis=0)
        camera = CameraParams(rotation=omega, translation=translation, scale=scale)

        out = render_mesh(mesh, tex_arr, camera, illum, image_size, image_size)
        lm_screen, _ = project(mesh.vertices[model.landmark_vertex_ids], camera)
        landmarks = LandmarkSet(points=lm_screen,
                                confidences=np.ones(len(lm_screen)))
        mask = Image.from_array(out.coverage.astype(np.float64)[:, :, None])
        views.append(FitView(image=out.color, landmarks=landmarks, mask=mask))
        params.append(ViewParams(camera=camera, expression=expr, illumination=illum))
        expressions.append(expr)
        images.append(out.color)

    return CaptureSet(model=model, identity=identity, texture=texture,
                      expressions=expressions, views=views, view_params=params,
                      images=images)


# ---------------------------------------------------------------------------
# derived template textures


def symmetrize(texture: np.ndarray) -> np.ndarray:
    """Average a texture with its horizontal mirror; the result is exactly
    left/right symmetric."""
    arr = np.asarray(texture, dtype=np.float64)
    return 0.5 * (arr + arr[:, ::-1])


def normal_template(model: MorphableModel, resolution=None) -> Image:
    """Mean-shape vertex normals unwrapped into UV space, encoded (n+1)/2.
    Texels outside the chart encode the zero vector (mid-gray)."""
    if resolution is None:
        h, w = model.uv_resolution
    else:
        h = w = int(resolution)
    tri_id, bary = uv_rasterize(model.uv_coords, model.uv_triangles, h, w)
    normals = vertex_normals(model.mean_shape, model.triangles)
    out = np.zeros((h, w, 3))
    covered = tri_id >= 0
    tids = tri_id[covered]
    vids = model.triangles[tids]
    n = np.einsum("nk,nkj->nj", bary[covered], normals[vids])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.where(norm > 1e-12, n / np.maximum(norm, 1e-12), [0.0, 0.0, 1.0])
    out[covered] = n
    return Image.from_array((out + 1.0) / 2.0)


# ---------------------------------------------------------------------------
# fixture set on disk


def write_fixture_set(out_dir, seed=0, uv_resolution=256, image_size=96,
                      yaws=(-0.45, 0.0, 0.45), directional=True,
                      reference=True) -> dict:
    """Generate the on-disk fixture set and return its manifest.

    Writes the toy model, three rendered views with landmark/mask files, the
    symmetrized template texture, a normal template, a fit config wired to
    the views, and (unless reference=False) the outputs of the reference
    pipeline run — fit, per-view unwrap, blend, pyramid blend, final render —
    produced through the same command-line code paths a user would invoke, so
    a re-run reproduces them.
    """
    os.makedirs(out_dir, exist_ok=True)
    model = toy_model(seed=seed, uv_resolution=uv_resolution)
    model_path = os.path.join(out_dir, "toy_model.avf")
    save_model(model, model_path)

    capture = synthetic_capture(model, seed=seed + 1, image_size=image_size,
                                yaws=yaws, directional=directional,
                                symmetric_albedo=directional)
    view_entries = []
    for i, view in enumerate(capture.views):
        img = f"view_{i}.png"
        lms = f"view_{i}_landmarks.txt"
        msk = f"view_{i}_mask.png"
        save_image(view.image, os.path.join(out_dir, img))
        save_landmarks(view.landmarks, os.path.join(out_dir, lms))
        save_image(view.mask, os.path.join(out_dir, msk))
        view_entries.append({"image": img, "landmarks": lms, "mask": msk})

    gt_tex = np.clip(
        (model.mean_texture.reshape(-1) + model.texture_basis @ capture.texture)
        .reshape(model.mean_texture.shape), 0.0, 1.0)
    save_image(Image.from_array(gt_tex), os.path.join(out_dir, "detailed_texture.png"))
    template = symmetrize(gt_tex)
    save_image(Image.from_array(template), os.path.join(out_dir, "template_texture.png"))
    save_image(Image.from_array(template), os.path.join(out_dir, "symmetric_texture.png"))
    save_image(normal_template(model), os.path.join(out_dir, "template_normal.png"))

    config = {
        "weights": {"rgb": 1.0, "landmark": 50.0, "identity": 0.0,
                    "regularizer": 1e-3},
        "optimizer": {"max_iters": 200, "tolerance": 1e-6},
        "views": view_entries,
    }
    with open(os.path.join(out_dir, "fit_config.json"), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")

    # ground-truth camera/illumination parameters, for inspection
    gt = {
        "identity": list(capture.identity),
        "texture": list(capture.texture),
        "views": [{
            "rotation": list(vp.camera.rotation),
            "translation": list(vp.camera.translation),
            "scale": vp.camera.scale,
            "expression": list(vp.expression),
            "sh": [list(row) for row in vp.illumination.sh_coefficients],
        } for vp in capture.view_params],
    }
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(gt, fh, indent=2)
        fh.write("\n")

    manifest = {
        "seed": seed, "uv_resolution": uv_resolution, "image_size": image_size,
        "yaws": list(yaws), "directional": directional,
        "model": "toy_model.avf", "views": view_entries,
        "template_texture": "template_texture.png",
        "symmetric_texture": "symmetric_texture.png",
        "template_normal": "template_normal.png",
        "detailed_texture": "detailed_texture.png",
        "ground_truth": "ground_truth.json",
        "fit_config": "fit_config.json",
    }

    if reference:
        manifest["reference"] = run_reference_pipeline(out_dir, manifest)

    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def run_reference_pipeline(out_dir, manifest) -> dict:
    """Fit -> unwrap x views -> blend -> lpblend -> render over the written
    fixture files, via the command-line entry point."""
    from .cli import main as cli_main  # local: cli imports this module

    def run(argv):
        code = cli_main(argv)
        if code != 0:
            raise RuntimeError(f"reference pipeline step failed ({code}): {argv}")

    p = lambda name: os.path.join(out_dir, name)
    fit_dir = p("fit")
    run(["fit", "--model", p(manifest["model"]),
         "--config", p(manifest["fit_config"]), "--out", fit_dir])
    fit_result = os.path.join(fit_dir, "fit_result.json")

    blend_inputs = []
    for i, entry in enumerate(manifest["views"]):
        uv, val = p(f"uv_{i}.png"), p(f"uv_{i}_validity.png")
        run(["unwrap", "--model", p(manifest["model"]),
             "--image", p(entry["image"]), "--mask", p(entry["mask"]),
             "--fit", fit_result, "--view", str(i),
             "--resolution", str(manifest["uv_resolution"]),
             "--out", uv, "--out-validity", val])
        blend_inputs.append(f"{uv},{val}")

    run(["blend", "--inputs", *blend_inputs,
         "--out", p("blended.png"), "--out-validity", p("blended_validity.png")])
    run(["lpblend", "--source", p("blended.png"),
         "--template", p(manifest["template_texture"]),
         "--out", p("final_texture.png")])
    size = str(manifest["image_size"])
    front = len(manifest["views"]) // 2
    run(["render", "--model", p(manifest["model"]), "--fit", fit_result,
         "--view", str(front), "--texture", p("final_texture.png"),
         "--width", size, "--height", size, "--out", p("reference_render.png")])
    return {
        "fit_result": "fit/fit_result.json",
        "blended": "blended.png",
        "final_texture": "final_texture.png",
        "render": "reference_render.png",
        "front_view": front,
    }
