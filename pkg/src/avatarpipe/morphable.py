"""Linear morphable-model decoding.

Geometry and texture are both affine in their coefficients: a mean plus a
basis-times-coefficients offset. Texture additionally clamps to [0,1] at the
very end; fitting code that needs gradients through the clamp should use
:func:`decode_texture_raw` and apply the clamp mask itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assets import Image, Mesh, MorphableModel, UVMap
from .errors import DimensionError
from .uvtex import uv_coverage


@dataclass
class ShapeParams:
    identity: np.ndarray    # (K_id,)
    expression: np.ndarray  # (K_exp,)

    def __post_init__(self):
        self.identity = np.asarray(self.identity, dtype=np.float64).ravel()
        self.expression = np.asarray(self.expression, dtype=np.float64).ravel()

    @classmethod
    def zeros(cls, model: MorphableModel) -> "ShapeParams":
        return cls(np.zeros(model.num_identity), np.zeros(model.num_expression))


@dataclass
class TextureParams:
    coefficients: np.ndarray  # (K_tex,)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64).ravel()

    @classmethod
    def zeros(cls, model: MorphableModel) -> "TextureParams":
        return cls(np.zeros(model.num_texture))


def _check_len(name, vec, expected):
    if vec.shape[0] != expected:
        raise DimensionError(f"{name} has {vec.shape[0]} coefficients, model expects {expected}")


def decode_shape(model: MorphableModel, params: ShapeParams) -> Mesh:
    """mean + identity_basis @ id + expression_basis @ expr, reshaped to (V,3).

    Deterministic, no hidden state; repeated calls with equal inputs give
    equal meshes.
    """
    _check_len("identity", params.identity, model.num_identity)
    _check_len("expression", params.expression, model.num_expression)
    flat = model.mean_shape.reshape(-1).copy()
    flat += model.identity_basis @ params.identity
    flat += model.expression_basis @ params.expression
    return model.mesh_for(flat.reshape(-1, 3))


def decode_texture_raw(model: MorphableModel, params: TextureParams) -> np.ndarray:
    """Unclamped linear texture decode, shape (uv_h, uv_w, 3)."""
    _check_len("texture", params.coefficients, model.num_texture)
    flat = model.mean_texture.reshape(-1) + model.texture_basis @ params.coefficients
    return flat.reshape(model.mean_texture.shape)


def decode_texture(model: MorphableModel, params: TextureParams) -> UVMap:
    """Clamped texture decode as a UVMap.

    Validity is 1 exactly where the model's UV layout covers a texel center
    and 0 elsewhere; uncovered texels are black.
    """
    raw = decode_texture_raw(model, params)
    color = np.clip(raw, 0.0, 1.0)
    uv_h, uv_w = model.uv_resolution
    validity = uv_coverage(model.uv_coords, model.uv_triangles, uv_h, uv_w).astype(np.float64)
    return UVMap(color=Image.from_array(color * validity[:, :, None]), validity=validity)


def landmark_positions(model: MorphableModel, params: ShapeParams) -> np.ndarray:
    """3D positions of the model's landmark vertices, shape (L, 3)."""
    mesh = decode_shape(model, params)
    return mesh.vertices[model.landmark_vertex_ids]
