"""Command-line surface for the pipeline.

Each subcommand is a thin wrapper over one library operation, exposing its
parameters as flags with the library defaults. Exit codes are uniform:
0 success, 2 usage or input error, 3 numerical failure. Commands are
deterministic given their flags (and --seed where randomness exists) and
write only to paths given via --out flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .assets import (Image, UVMap, load_image, load_landmarks, load_model,
                     save_image, save_mesh)
from .errors import NumericalError, PipelineError, ValidationError
from .fit import (FitView, FitWeights, OptimizerSettings, initialize_problem,
                  load_fit_config, load_fit_result, optimize, save_fit_result)
from .imaging import (DegradationParams, default_params, degrade,
                      load_degradation_ranges, sample_degradation)
from .metrics import bse
from .morphable import ShapeParams, TextureParams, decode_shape, decode_texture
from .pyramid import lp_blend, lp_blend_normal
from .render import render_mesh
from .uvtex import blend_multiview, unwrap


def _die(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _resolve(path, base_dir):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _load_view(image_path, landmarks_path, mask_path=None) -> FitView:
    image = load_image(image_path)
    landmarks = load_landmarks(landmarks_path)
    mask = load_image(mask_path) if mask_path else None
    return FitView(image=image, landmarks=landmarks, mask=mask)


def _view_from_fit(model, fit_result, index):
    if not 0 <= index < len(fit_result.views):
        raise ValidationError(
            f"view index {index} out of range (fit has {len(fit_result.views)} views)")
    vp = fit_result.views[index]
    mesh = decode_shape(model, ShapeParams(identity=fit_result.identity,
                                           expression=vp.expression))
    return vp, mesh


def _validity_path(out_path):
    root, ext = os.path.splitext(out_path)
    return f"{root}_validity{ext or '.png'}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    model = load_model(args.model)
    weights, settings, provider = FitWeights(), OptimizerSettings(), None
    view_specs = []
    if args.config:
        cfg = load_fit_config(args.config)
        weights, settings, provider = cfg.weights, cfg.settings, cfg.identity_provider
        base = os.path.dirname(os.path.abspath(args.config))
        view_specs = [
            (_resolve(v["image"], base), _resolve(v["landmarks"], base),
             _resolve(v["mask"], base) if v.get("mask") else None)
            for v in cfg.view_paths]
    if args.views:
        view_specs = []
        for spec in args.views:
            parts = spec.split(",")
            if len(parts) not in (2, 3):
                return _die(f"--views expects image,landmarks[,mask], got {spec!r}")
            view_specs.append((parts[0], parts[1],
                               parts[2] if len(parts) == 3 else None))
    if not view_specs:
        return _die("no views given (use --views or a config with views)")

    views = [_load_view(*spec) for spec in view_specs]
    problem = initialize_problem(model, views, weights=weights,
                                 settings=settings, identity_provider=provider)
    result = optimize(problem)

    os.makedirs(args.out, exist_ok=True)
    save_fit_result(result, os.path.join(args.out, "fit_result.json"))
    identity_mesh = decode_shape(model, ShapeParams(
        identity=result.identity, expression=np.zeros(model.num_expression)))
    save_mesh(identity_mesh, os.path.join(args.out, "identity_mesh.obj"))
    for i, vp in enumerate(result.views):
        mesh = decode_shape(model, ShapeParams(identity=result.identity,
                                               expression=vp.expression))
        save_mesh(mesh, os.path.join(args.out, f"view_{i}_mesh.obj"))
    print(f"fit: loss={result.loss_total:.6g} iterations={result.iterations} "
          f"converged={result.converged}")
    if result.line_search_failed and result.iterations == 0:
        print("optimizer failed to take any step; wrote initial state",
              file=sys.stderr)
        return 3
    return 0


def cmd_unwrap(args) -> int:
    model = load_model(args.model)
    image = load_image(args.image)
    fit_result = load_fit_result(args.fit)
    vp, mesh = _view_from_fit(model, fit_result, args.view)
    mask = load_image(args.mask) if args.mask else None
    uv_map = unwrap(image, mesh, vp.camera, mask=mask,
                    uv_resolution=args.resolution)
    save_image(uv_map.color, args.out)
    validity_path = args.out_validity or _validity_path(args.out)
    save_image(Image.from_array(uv_map.validity[:, :, None]), validity_path)
    return 0


def cmd_blend(args) -> int:
    maps = []
    for spec in args.inputs:
        parts = spec.split(",")
        if len(parts) != 2:
            return _die(f"--inputs expects color,validity pairs, got {spec!r}")
        color = load_image(parts[0])
        validity = load_image(parts[1]).data[:, :, 0].astype(np.float64)
        maps.append(UVMap(color=color, validity=validity))
    blended = blend_multiview(maps, feather_sigma=args.feather_sigma)
    save_image(blended.color, args.out)
    validity_path = args.out_validity or _validity_path(args.out)
    save_image(Image.from_array(blended.validity[:, :, None]), validity_path)
    return 0


def cmd_lpblend(args) -> int:
    source = load_image(args.source)
    template = load_image(args.template)
    fn = lp_blend_normal if args.normals else lp_blend
    out = fn(source, template, transfer_levels=args.levels)
    save_image(out.color, args.out)
    return 0


def cmd_bse(args) -> int:
    texture = load_image(args.texture)
    print(f"{bse(texture, kernel_size=args.kernel_size):.6f}")
    return 0


def cmd_degrade(args) -> int:
    image = load_image(args.image)
    if args.config:
        ranges = load_degradation_ranges(args.config)
        params = sample_degradation(ranges, args.seed)
    else:
        base = default_params(seed=args.seed)
        params = DegradationParams(
            blur_sigma=args.blur_sigma if args.blur_sigma is not None else base.blur_sigma,
            down_factor=args.down_factor if args.down_factor is not None else base.down_factor,
            noise_sigma=args.noise_sigma if args.noise_sigma is not None else base.noise_sigma,
            nlm_strength=args.nlm_strength if args.nlm_strength is not None else base.nlm_strength,
            seed=args.seed,
        )
    out = degrade(image, params)
    save_image(out, args.out)
    print(json.dumps({"blur_sigma": params.blur_sigma,
                      "down_factor": params.down_factor,
                      "noise_sigma": params.noise_sigma,
                      "nlm_strength": params.nlm_strength,
                      "seed": params.seed}))
    return 0


def cmd_render(args) -> int:
    model = load_model(args.model)
    fit_result = load_fit_result(args.fit)
    vp, mesh = _view_from_fit(model, fit_result, args.view)
    if args.texture:
        texture = load_image(args.texture)
    else:
        texture = decode_texture(model, TextureParams(coefficients=fit_result.texture))
    out = render_mesh(mesh, texture, vp.camera, vp.illumination,
                      args.width, args.height)
    save_image(out.color, args.out)
    return 0


def cmd_make_fixtures(args) -> int:
    from .fixtures import write_fixture_set

    write_fixture_set(args.out, seed=args.seed, uv_resolution=args.uv_resolution,
                      image_size=args.image_size, directional=args.directional,
                      reference=not args.skip_reference)
    print(f"fixtures written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avatarpipe",
        description="Morphable-model fitting, UV texture unwrapping/blending, "
                    "illumination normalization, and degradation simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the model to one or more views")
    p.add_argument("--model", required=True)
    p.add_argument("--views", nargs="*", metavar="IMAGE,LANDMARKS[,MASK]")
    p.add_argument("--config", help="JSON fit configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("unwrap", help="project a view into UV texture space")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--fit", required=True, help="fit_result.json")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--mask")
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--out-validity")
    p.set_defaults(func=cmd_unwrap)

    p = sub.add_parser("blend", help="merge per-view UV maps by validity")
    p.add_argument("--inputs", nargs="+", required=True,
                   metavar="COLOR,VALIDITY")
    p.add_argument("--feather-sigma", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--out-validity")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("lpblend",
                       help="swap coarse pyramid levels with a template's")
    p.add_argument("--source", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--levels", type=int, help="detail levels kept from source")
    p.add_argument("--normals", action="store_true",
                   help="treat inputs as encoded normal maps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lpblend)

    p = sub.add_parser("bse", help="brightness symmetry error of a texture")
    p.add_argument("--texture", required=True)
    p.add_argument("--kernel-size", type=int, default=55)
    p.set_defaults(func=cmd_bse)

    p = sub.add_parser("degrade", help="simulate a webcam capture")
    p.add_argument("--image", required=True)
    p.add_argument("--blur-sigma", type=float)
    p.add_argument("--down-factor", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--nlm-strength", type=float)
    p.add_argument("--config", help="JSON parameter ranges to sample from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("render", help="render a fitted view")
    p.add_argument("--model", required=True)
    p.add_argument("--fit", required=True, help="fit_result.json")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--texture", help="UV texture image (default: fitted coefficients)")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("make-fixtures",
                       help="generate the synthetic model, views, and reference outputs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--uv-resolution", type=int, default=256)
    p.add_argument("--image-size", type=int, default=96)
    p.add_argument("--directional", action=argparse.BooleanOptionalAction,
                   default=True, help="light the views asymmetrically")
    p.add_argument("--skip-reference", action="store_true",
                   help="skip the fit/unwrap/blend/render reference pipeline")
    p.set_defaults(func=cmd_make_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (PipelineError, FileNotFoundError, IsADirectoryError) as exc:
        return _die(str(exc))


if __name__ == "__main__":
    sys.exit(main())
