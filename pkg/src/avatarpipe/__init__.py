"""Classical webcam-to-avatar core: linear morphable-model fitting through a
differentiable renderer, multi-view UV texture unwrapping and blending,
Laplacian-pyramid illumination normalization, webcam degradation simulation,
and the brightness symmetry error metric."""

from .assets import (Image, LandmarkSet, Mesh, MorphableModel, SegMask, UVMap,
                     load_image, load_landmarks, load_mesh, load_model,
                     save_image, save_landmarks, save_mesh, save_model)
from .errors import (DimensionError, FormatError, NumericalError, ParseError,
                     PipelineError, ProviderError, ValidationError)
from .fit import (FitProblem, FitResult, FitView, FitWeights,
                  OptimizerSettings, ViewParams, initialize_problem,
                  load_fit_config, load_fit_result, optimize, save_fit_result)
from .imaging import (DegradationParams, DegradationRanges,
                      add_gaussian_noise, default_params, degrade,
                      gaussian_blur, load_degradation_ranges, nlm_denoise,
                      resample, sample_degradation)
from .metrics import bse, embedding_distance, psnr, ssim, to_luma
from .morphable import (ShapeParams, TextureParams, decode_shape,
                        decode_texture, landmark_positions)
from .pyramid import (gaussian_pyramid, laplacian_pyramid, lp_blend,
                      lp_blend_normal, reconstruct)
from .render import (CameraParams, Illumination, RenderOutput, project,
                     rasterize, render_backward, render_mesh, shade)
from .uvtex import blend_multiview, unwrap, uv_coverage

__version__ = "0.1.0"

__all__ = [
    "Image", "LandmarkSet", "Mesh", "MorphableModel", "SegMask", "UVMap",
    "load_image", "load_landmarks", "load_mesh", "load_model",
    "save_image", "save_landmarks", "save_mesh", "save_model",
    "DimensionError", "FormatError", "NumericalError", "ParseError",
    "PipelineError", "ProviderError", "ValidationError",
    "FitProblem", "FitResult", "FitView", "FitWeights", "OptimizerSettings",
    "ViewParams", "initialize_problem", "load_fit_config", "load_fit_result",
    "optimize", "save_fit_result",
    "DegradationParams", "DegradationRanges", "add_gaussian_noise",
    "default_params", "degrade", "gaussian_blur", "load_degradation_ranges",
    "nlm_denoise", "resample", "sample_degradation",
    "bse", "embedding_distance", "psnr", "ssim", "to_luma",
    "ShapeParams", "TextureParams", "decode_shape", "decode_texture",
    "landmark_positions",
    "gaussian_pyramid", "laplacian_pyramid", "lp_blend", "lp_blend_normal",
    "reconstruct",
    "CameraParams", "Illumination", "RenderOutput", "project", "rasterize",
    "render_backward", "render_mesh", "shade",
    "blend_multiview", "unwrap", "uv_coverage",
    "__version__",
]
