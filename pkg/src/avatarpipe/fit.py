"""Multi-view analysis-by-synthesis fitting.

One identity and one texture are shared across all views; camera, expression
and illumination are per-view. The total loss is

    w_rgb * mean_i L_RGB_i + w_landmark * mean_i L_lm_i
    + w_identity * mean_i L_id_i + w_regularizer * R

with R = |id|^2 + mean_i |expr_i|^2 + |tex|^2. Means (rather than sums) make
a problem with N identical views exactly equivalent to the single-view
problem, which is what lets the shared identity agree between the two.

Optimization is LBFGS (two-loop recursion) with Armijo backtracking; camera
scale is carried as log(scale) inside the packed vector so it stays positive
without constraints. The identity term calls an external embedding provider
and is value-only: it never contributes gradients.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .assets import Image, LandmarkSet, MorphableModel, save_image
from .errors import (DimensionError, NumericalError, ParseError,
                     ValidationError)
from .providers import run_provider
from .render import (CameraParams, Illumination, rasterize,
                     render_backward, rotate, rotate_vjp, shade)


# ---------------------------------------------------------------------------
# problem containers


@dataclass
class FitView:
    """One observed view: image, detected landmarks, optional face mask."""

    image: Image
    landmarks: LandmarkSet
    mask: Image = None

    def __post_init__(self):
        if self.mask is not None:
            if (self.mask.height, self.mask.width) != (self.image.height, self.image.width):
                raise DimensionError("mask dimensions must match the view image")


@dataclass
class ViewParams:
    camera: CameraParams
    expression: np.ndarray
    illumination: Illumination

    def __post_init__(self):
        self.expression = np.asarray(self.expression, dtype=np.float64).ravel()


@dataclass
class FitWeights:
    rgb: float = 1.0
    landmark: float = 50.0
    identity: float = 0.0
    regularizer: float = 1e-3


@dataclass
class OptimizerSettings:
    max_iters: int = 200
    tolerance: float = 1e-6
    history: int = 10
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    max_backtracks: int = 30


@dataclass
class FitProblem:
    model: MorphableModel
    views: list                      # of FitView
    identity: np.ndarray
    texture: np.ndarray
    view_params: list                # of ViewParams
    weights: FitWeights = field(default_factory=FitWeights)
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)
    identity_provider: object = None  # command (str or argv list), value-only

    def __post_init__(self):
        if not self.views:
            raise ValidationError("a fit problem needs at least one view")
        if len(self.views) != len(self.view_params):
            raise DimensionError("views and view_params must pair up")
        self.identity = np.asarray(self.identity, dtype=np.float64).ravel()
        self.texture = np.asarray(self.texture, dtype=np.float64).ravel()
        for v in self.views:
            if len(v.landmarks) != len(self.model.landmark_vertex_ids):
                raise DimensionError(
                    f"view has {len(v.landmarks)} landmarks, model expects "
                    f"{len(self.model.landmark_vertex_ids)}"
                )


@dataclass
class FitResult:
    identity: np.ndarray
    texture: np.ndarray
    views: list          # of ViewParams
    loss_total: float
    loss_terms: dict
    iterations: int
    converged: bool
    line_search_failed: bool = False


def save_fit_result(result: FitResult, path) -> None:
    """Write a fit result as JSON (full float precision)."""
    payload = {
        "identity": list(result.identity),
        "texture": list(result.texture),
        "views": [{
            "rotation": list(vp.camera.rotation),
            "translation": list(vp.camera.translation),
            "scale": vp.camera.scale,
            "expression": list(vp.expression),
            "sh": [list(row) for row in vp.illumination.sh_coefficients],
        } for vp in result.views],
        "loss_total": result.loss_total,
        "loss_terms": result.loss_terms,
        "iterations": result.iterations,
        "converged": result.converged,
        "line_search_failed": result.line_search_failed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_fit_result(path) -> FitResult:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=str(path))
    try:
        views = [ViewParams(
            camera=CameraParams(rotation=np.asarray(v["rotation"], dtype=np.float64),
                                translation=np.asarray(v["translation"], dtype=np.float64),
                                scale=float(v["scale"])),
            expression=np.asarray(v["expression"], dtype=np.float64),
            illumination=Illumination(np.asarray(v["sh"], dtype=np.float64)),
        ) for v in raw["views"]]
        return FitResult(
            identity=np.asarray(raw["identity"], dtype=np.float64),
            texture=np.asarray(raw["texture"], dtype=np.float64),
            views=views,
            loss_total=float(raw["loss_total"]),
            loss_terms=dict(raw.get("loss_terms", {})),
            iterations=int(raw["iterations"]),
            converged=bool(raw["converged"]),
            line_search_failed=bool(raw.get("line_search_failed", False)),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc}", path=str(path))


# ---------------------------------------------------------------------------
# initialization


def initialize_problem(model: MorphableModel, views, weights=None, settings=None,
                       identity_provider=None) -> FitProblem:
    """Build a FitProblem with the documented starting point.

    All coefficients start at zero and rotation at identity; per-view scale
    is the ratio of the landmark bounding-box diagonal to the model's
    landmark extent in the xy-plane, and translation aligns the centroids.
    Illumination starts as unit ambient.
    """
    model_lm = model.mean_shape[model.landmark_vertex_ids][:, :2]
    model_diag = float(np.linalg.norm(model_lm.max(axis=0) - model_lm.min(axis=0)))
    if model_diag <= 0:
        raise NumericalError("model landmarks are degenerate (zero extent)")
    view_params = []
    for view in views:
        pts = view.landmarks.points
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        scale = max(diag / model_diag, 1e-6)
        translation = pts.mean(axis=0) - scale * model_lm.mean(axis=0)
        view_params.append(ViewParams(
            camera=CameraParams(rotation=np.zeros(3), translation=translation,
                                scale=scale),
            expression=np.zeros(model.num_expression),
            illumination=Illumination.ambient(1.0),
        ))
    return FitProblem(
        model=model, views=list(views),
        identity=np.zeros(model.num_identity),
        texture=np.zeros(model.num_texture),
        view_params=view_params,
        weights=weights or FitWeights(),
        settings=settings or OptimizerSettings(),
        identity_provider=identity_provider,
    )


# ---------------------------------------------------------------------------
# losses


def loss_rgb(rendered: Image, source: Image, coverage, mask=None):
    """Mean absolute color difference over covered (and mask-positive)
    pixels. Returns (value, gradient w.r.t. the rendered color); the
    subgradient at exact ties is 0. No overlap means value 0.
    """
    if (rendered.height, rendered.width) != (source.height, source.width):
        raise DimensionError("rendered and source image sizes differ")
    r = np.asarray(rendered.data, dtype=np.float64)
    s = np.asarray(source.data, dtype=np.float64)
    sel = np.asarray(coverage, dtype=np.float64) > 0
    if mask is not None:
        if (mask.height, mask.width) != (source.height, source.width):
            raise DimensionError("mask dimensions must match the view image")
        sel = sel & (np.asarray(mask.data)[:, :, 0] > 0.5)
    grad = np.zeros_like(r)
    count = int(sel.sum())
    if count == 0:
        return 0.0, grad
    diff = r - s
    denom = count * r.shape[2]
    value = float(np.abs(diff[sel]).sum() / denom)
    grad[sel] = np.sign(diff[sel]) / denom
    return value, grad


def loss_landmark(projected, landmarks: LandmarkSet, image_width, image_height):
    """Confidence-weighted mean squared pixel distance, normalized by the
    squared image diagonal. Returns (value, gradient w.r.t. projections)."""
    q = np.asarray(projected, dtype=np.float64)
    if q.shape != landmarks.points.shape:
        raise DimensionError(
            f"projected {q.shape} vs detected {landmarks.points.shape}"
        )
    n = len(landmarks)
    diag2 = float(image_width) ** 2 + float(image_height) ** 2
    delta = q - landmarks.points
    conf = landmarks.confidences[:, None]
    value = float((conf * delta * delta).sum() / (n * diag2))
    grad = 2.0 * conf * delta / (n * diag2)
    return value, grad


def loss_identity(provider_command, rendered: Image, source: Image, workdir=None) -> float:
    """Squared L2 distance between external embeddings of the rendered and
    source images. Purely a value: no gradient flows through the provider.
    Returns 0 when no provider is configured."""
    if provider_command is None:
        return 0.0
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        pa = os.path.join(tmp, "rendered.png")
        pb = os.path.join(tmp, "source.png")
        save_image(rendered, pa)
        save_image(source, pb)
        vectors = run_provider(provider_command, [pa, pb])
    diff = vectors[0] - vectors[1]
    return float(diff @ diff)


def regularizer(identity, expressions, texture, group_weights=(1.0, 1.0, 1.0)):
    """Sum of squared coefficients per group: identity, expressions (averaged
    over views), texture. Returns (value, (g_id, [g_expr...], g_tex))."""
    gi, ge, gt = group_weights
    identity = np.asarray(identity, dtype=np.float64)
    texture = np.asarray(texture, dtype=np.float64)
    expressions = [np.asarray(e, dtype=np.float64) for e in expressions]
    n = max(len(expressions), 1)
    value = gi * float(identity @ identity) + gt * float(texture @ texture)
    value += ge * sum(float(e @ e) for e in expressions) / n
    g_id = 2.0 * gi * identity
    g_tex = 2.0 * gt * texture
    g_expr = [2.0 * ge * e / n for e in expressions]
    return value, (g_id, g_expr, g_tex)


# ---------------------------------------------------------------------------
# parameter packing

_SH_DIM = 27


class _Packer:
    """Flat-vector layout: [identity, texture, per view (rotation(3),
    translation(2), log scale(1), expression, sh(27))]."""

    def __init__(self, model: MorphableModel, n_views: int):
        self.k_id = model.num_identity
        self.k_tex = model.num_texture
        self.k_exp = model.num_expression
        self.n_views = n_views
        self.per_view = 6 + self.k_exp + _SH_DIM
        self.size = self.k_id + self.k_tex + n_views * self.per_view

    def view_offset(self, i):
        return self.k_id + self.k_tex + i * self.per_view

    def pack(self, problem: FitProblem) -> np.ndarray:
        x = np.empty(self.size)
        x[:self.k_id] = problem.identity
        x[self.k_id:self.k_id + self.k_tex] = problem.texture
        for i, vp in enumerate(problem.view_params):
            o = self.view_offset(i)
            x[o:o + 3] = vp.camera.rotation
            x[o + 3:o + 5] = vp.camera.translation
            x[o + 5] = math.log(vp.camera.scale)
            x[o + 6:o + 6 + self.k_exp] = vp.expression
            x[o + 6 + self.k_exp:o + self.per_view] = vp.illumination.sh_coefficients.ravel()
        return x

    def unpack(self, x) -> tuple:
        identity = x[:self.k_id].copy()
        texture = x[self.k_id:self.k_id + self.k_tex].copy()
        views = []
        for i in range(self.n_views):
            o = self.view_offset(i)
            views.append(ViewParams(
                camera=CameraParams(rotation=x[o:o + 3].copy(),
                                    translation=x[o + 3:o + 5].copy(),
                                    scale=math.exp(x[o + 5])),
                expression=x[o + 6:o + 6 + self.k_exp].copy(),
                illumination=Illumination(
                    x[o + 6 + self.k_exp:o + self.per_view].reshape(3, 9).copy()),
            ))
        return identity, texture, views


# ---------------------------------------------------------------------------
# objective


def _evaluate(problem: FitProblem, packer: _Packer, x, need_grad=True):
    """Total loss (and packed gradient) at packed parameters x.

    Out-of-domain trial points (non-finite entries, or a log-scale slot the
    exponential would overflow) evaluate to +inf so the line search backs off.
    """
    model = problem.model
    w = problem.weights
    log_scales = x[packer.k_id + packer.k_tex + 5::packer.per_view]
    if not np.isfinite(x).all() or np.abs(log_scales).max() > 50.0:
        return np.inf, None, {}
    identity, texture, views = packer.unpack(x)
    n_views = len(views)

    mean_flat = model.mean_shape.reshape(-1)
    tex_raw = model.mean_texture.reshape(-1) + model.texture_basis @ texture
    tex_clamped = np.clip(tex_raw, 0.0, 1.0).reshape(model.mean_texture.shape)
    tex_mask = ((tex_raw >= 0.0) & (tex_raw <= 1.0)).astype(np.float64)

    grad = np.zeros(packer.size) if need_grad else None
    terms = {"rgb": 0.0, "landmark": 0.0, "identity": 0.0}
    use_rgb = w.rgb != 0.0
    use_id = w.identity != 0.0 and problem.identity_provider is not None

    g_tex_texels = np.zeros_like(tex_raw) if need_grad else None

    for i, (view, vp) in enumerate(zip(problem.views, views)):
        verts_flat = (mean_flat + model.identity_basis @ identity
                      + model.expression_basis @ vp.expression)
        mesh = model.mesh_for(verts_flat.reshape(-1, 3))
        o = packer.view_offset(i)
        g_verts_flat = np.zeros(verts_flat.shape) if need_grad else None

        if use_rgb or use_id:
            raster = rasterize(mesh, vp.camera, view.image.width, view.image.height)
            rendered = shade(raster, mesh, tex_clamped, vp.illumination)

        if use_rgb:
            value, g_img = loss_rgb(rendered, view.image, raster.coverage, view.mask)
            terms["rgb"] += value / n_views
            if need_grad:
                rg = render_backward(raster, mesh, tex_clamped, vp.illumination,
                                     g_img * (w.rgb / n_views))
                g_verts_flat += rg.vertices.reshape(-1)
                g_tex_texels += (rg.texture.reshape(-1) * tex_mask)
                grad[o:o + 3] += rg.camera.rotation
                grad[o + 3:o + 5] += rg.camera.translation
                grad[o + 5] += rg.camera.scale * vp.camera.scale  # d/d log s
                grad[o + 6 + packer.k_exp:o + packer.per_view] += rg.sh.ravel()

        # landmark term
        lm_pts = mesh.vertices[model.landmark_vertex_ids]
        lm_cam = rotate(vp.camera.rotation, lm_pts)
        lm_screen = vp.camera.scale * lm_cam[:, :2] + vp.camera.translation
        value, g_q = loss_landmark(lm_screen, view.landmarks,
                                   view.image.width, view.image.height)
        terms["landmark"] += value / n_views
        if need_grad:
            g_q = g_q * (w.landmark / n_views)
            grad[o + 3:o + 5] += g_q.sum(axis=0)
            grad[o + 5] += float((g_q * lm_cam[:, :2]).sum()) * vp.camera.scale
            g_lm_cam = np.zeros_like(lm_cam)
            g_lm_cam[:, :2] = vp.camera.scale * g_q
            g_rot, g_lm_model = rotate_vjp(vp.camera.rotation, lm_pts, g_lm_cam)
            grad[o:o + 3] += g_rot
            scatter = np.zeros((model.num_vertices, 3))
            np.add.at(scatter, model.landmark_vertex_ids, g_lm_model)
            g_verts_flat += scatter.reshape(-1)

        if use_id:
            terms["identity"] += loss_identity(problem.identity_provider,
                                               rendered, view.image) / n_views

        if need_grad:
            grad[:packer.k_id] += model.identity_basis.T @ g_verts_flat
            grad[o + 6:o + 6 + packer.k_exp] += model.expression_basis.T @ g_verts_flat

    reg_value, (g_id_reg, g_expr_reg, g_tex_reg) = regularizer(
        identity, [vp.expression for vp in views], texture)
    terms["regularizer"] = reg_value

    total = (w.rgb * terms["rgb"] + w.landmark * terms["landmark"]
             + w.identity * terms["identity"] + w.regularizer * reg_value)
    if need_grad:
        grad[:packer.k_id] += w.regularizer * g_id_reg
        k0 = packer.k_id
        grad[k0:k0 + packer.k_tex] += model.texture_basis.T @ g_tex_texels
        grad[k0:k0 + packer.k_tex] += w.regularizer * g_tex_reg
        for i in range(n_views):
            o = packer.view_offset(i)
            grad[o + 6:o + 6 + packer.k_exp] += w.regularizer * g_expr_reg[i]
    return total, grad, terms


# ---------------------------------------------------------------------------
# LBFGS with Armijo backtracking


def _two_loop(g, s_list, y_list):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / float(y @ s)
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def optimize(problem: FitProblem) -> FitResult:
    """Run the fit from the problem's current parameters.

    Accepted steps never increase the loss (Armijo guarantees descent along
    descent directions, asserted per iteration). Convergence means the
    relative parameter change dropped below the tolerance. A failed line
    search terminates early with converged=False and the best point so far;
    max_iters=0 returns the initialization unchanged, converged=False.
    """
    st = problem.settings
    packer = _Packer(problem.model, len(problem.views))
    x = packer.pack(problem)
    f, g, terms = _evaluate(problem, packer, x, need_grad=True)
    if not np.isfinite(f):
        raise NumericalError(f"loss is not finite at initialization: {f}")

    best = (f, x.copy(), terms)
    s_hist, y_hist = [], []
    iterations = 0
    converged = False
    line_search_failed = False

    for _ in range(st.max_iters):
        d = -_two_loop(g, s_hist, y_hist)
        descent = float(g @ d)
        if descent >= 0.0:
            d = -g
            descent = float(g @ d)
        if descent == 0.0:
            converged = True  # zero gradient: nothing to move
            break

        # with no curvature history yet the raw gradient sets the step size;
        # damp it so the first trial stays in a sane region
        if s_hist:
            alpha = 1.0
        else:
            alpha = min(1.0, 1.0 / max(float(np.abs(g).sum()), 1e-12))
        accepted = False
        for _bt in range(st.max_backtracks):
            x_new = x + alpha * d
            f_new, _, _ = _evaluate(problem, packer, x_new, need_grad=False)
            if np.isfinite(f_new) and f_new <= f + st.armijo_c * alpha * descent:
                accepted = True
                break
            alpha *= st.armijo_shrink
        if not accepted:
            line_search_failed = True
            break  # line search exhausted: stop at best-so-far

        assert f_new <= f + 1e-12 * max(1.0, abs(f)), "accepted step increased the loss"
        f_new, g_new, terms = _evaluate(problem, packer, x_new, need_grad=True)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > st.history:
                s_hist.pop(0)
                y_hist.pop(0)
        rel_change = float(np.linalg.norm(s)) / max(1.0, float(np.linalg.norm(x)))
        x, f, g = x_new, f_new, g_new
        iterations += 1
        if f < best[0]:
            best = (f, x.copy(), terms)
        if rel_change < st.tolerance:
            converged = True
            break

    f_best, x_best, terms_best = best
    identity, texture, views = packer.unpack(x_best)
    terms_best = dict(terms_best)
    terms_best["total"] = f_best
    return FitResult(identity=identity, texture=texture, views=views,
                     loss_total=f_best, loss_terms=terms_best,
                     iterations=iterations, converged=converged,
                     line_search_failed=line_search_failed)


# ---------------------------------------------------------------------------
# config file


@dataclass
class FitConfig:
    weights: FitWeights
    settings: OptimizerSettings
    view_paths: list          # of dicts: image / landmarks / mask(optional)
    identity_provider: object = None


def load_fit_config(path) -> FitConfig:
    """Read the fit configuration: JSON with optional "weights",
    "optimizer", "views" (list of {image, landmarks, mask}) and
    "identity_provider" entries."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=str(path))
    if not isinstance(raw, dict):
        raise ParseError("fit config must be a JSON object", path=str(path))
    known = {"weights", "optimizer", "views", "identity_provider"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"{path}: unknown fit config keys {sorted(unknown)}")

    weights = FitWeights()
    for key, val in raw.get("weights", {}).items():
        if key not in ("rgb", "landmark", "identity", "regularizer"):
            raise ValidationError(f"{path}: unknown weight {key!r}")
        weights = replace(weights, **{key: float(val)})
    settings = OptimizerSettings()
    for key, val in raw.get("optimizer", {}).items():
        if not hasattr(settings, key):
            raise ValidationError(f"{path}: unknown optimizer setting {key!r}")
        cast = int if key in ("max_iters", "history", "max_backtracks") else float
        settings = replace(settings, **{key: cast(val)})
    views = []
    for entry in raw.get("views", []):
        if not isinstance(entry, dict) or "image" not in entry or "landmarks" not in entry:
            raise ValidationError(f"{path}: each view needs image and landmarks paths")
        views.append({"image": entry["image"], "landmarks": entry["landmarks"],
                      "mask": entry.get("mask")})
    return FitConfig(weights=weights, settings=settings, view_paths=views,
                     identity_provider=raw.get("identity_provider"))
