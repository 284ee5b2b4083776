"""Linear decode of shape, texture, and landmark positions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avatarpipe.errors import DimensionError
from avatarpipe.fixtures import toy_model
from avatarpipe.morphable import (ShapeParams, TextureParams, decode_shape,
                                  decode_texture, decode_texture_raw,
                                  landmark_positions)

from oracle_helpers import decode_ref


@pytest.fixture(scope="module")
def model():
    return toy_model(seed=0, uv_resolution=32)


def _coeff_lists(k, max_abs=2.0):
    return st.lists(st.floats(-max_abs, max_abs, allow_nan=False), min_size=k, max_size=k)


def test_decode_shape_zeros_is_mean(model):
    mesh = decode_shape(model, ShapeParams.zeros(model))
    np.testing.assert_allclose(mesh.vertices, model.mean_shape, atol=1e-12)


def test_decode_shape_single_mode(model):
    coeffs = np.zeros(model.num_identity)
    coeffs[0] = 2.0
    mesh = decode_shape(model, ShapeParams(identity=coeffs,
                                           expression=np.zeros(model.num_expression)))
    expected = model.mean_shape + 2.0 * model.identity_basis[:, 0].reshape(-1, 3)
    np.testing.assert_allclose(mesh.vertices, expected, atol=1e-10)


def test_decode_shape_matches_columnwise_oracle(model, rng):
    ident = rng.uniform(-1, 1, model.num_identity)
    expr = rng.uniform(-1, 1, model.num_expression)
    mesh = decode_shape(model, ShapeParams(identity=ident, expression=expr))
    expected = decode_ref(model.mean_shape.reshape(-1),
                          [(model.identity_basis, ident),
                           (model.expression_basis, expr)]).reshape(-1, 3)
    np.testing.assert_allclose(mesh.vertices, expected, atol=1e-5)


def test_decode_shape_topology_passthrough(model):
    mesh = decode_shape(model, ShapeParams.zeros(model))
    np.testing.assert_array_equal(mesh.triangles, model.triangles)
    np.testing.assert_array_equal(mesh.uv_triangles, model.uv_triangles)


def test_decode_texture_zeros_is_clamped_mean(model):
    uv = decode_texture(model, TextureParams.zeros(model))
    covered = uv.validity > 0
    expected = np.clip(model.mean_texture, 0.0, 1.0)
    np.testing.assert_allclose(uv.color.data[covered], expected[covered], atol=1e-12)
    assert np.all(uv.color.data[~covered] == 0.0)


def test_decode_texture_raw_matches_oracle(model, rng):
    coeffs = rng.uniform(-1, 1, model.num_texture)
    raw = decode_texture_raw(model, TextureParams(coefficients=coeffs))
    expected = decode_ref(model.mean_texture.reshape(-1),
                          [(model.texture_basis, coeffs)]).reshape(model.mean_texture.shape)
    np.testing.assert_allclose(raw, expected, atol=1e-5)


def test_decode_texture_clamps(model):
    coeffs = np.full(model.num_texture, 30.0)
    uv = decode_texture(model, TextureParams(coefficients=coeffs))
    assert uv.color.data.min() >= 0.0
    assert uv.color.data.max() <= 1.0


def test_landmark_positions_pick_landmark_vertices(model, rng):
    params = ShapeParams(identity=rng.uniform(-1, 1, model.num_identity),
                         expression=rng.uniform(-1, 1, model.num_expression))
    pos = landmark_positions(model, params)
    mesh = decode_shape(model, params)
    np.testing.assert_allclose(pos, mesh.vertices[model.landmark_vertex_ids], atol=0)
    assert pos.shape == (len(model.landmark_vertex_ids), 3)


@settings(max_examples=25, deadline=None)
@given(a=_coeff_lists(8), b=_coeff_lists(8), t=st.floats(0.0, 1.0))
def test_decode_shape_linearity(a, b, t):
    model = _LINEARITY_MODEL
    expr = np.zeros(model.num_expression)
    va = decode_shape(model, ShapeParams(np.array(a), expr)).vertices
    vb = decode_shape(model, ShapeParams(np.array(b), expr)).vertices
    mix = t * np.array(a) + (1 - t) * np.array(b)
    vmix = decode_shape(model, ShapeParams(mix, expr)).vertices
    np.testing.assert_allclose(vmix, t * va + (1 - t) * vb, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(coeffs=_coeff_lists(8))
def test_decode_texture_raw_linearity_in_mean(coeffs):
    model = _LINEARITY_MODEL
    raw = decode_texture_raw(model, TextureParams(np.array(coeffs)))
    neg = decode_texture_raw(model, TextureParams(-np.array(coeffs)))
    np.testing.assert_allclose((raw + neg) / 2, model.mean_texture, atol=1e-6)


_LINEARITY_MODEL = toy_model(seed=0, uv_resolution=16)


def test_decode_is_deterministic(model, rng):
    ident = rng.uniform(-1, 1, model.num_identity)
    expr = rng.uniform(-1, 1, model.num_expression)
    a = decode_shape(model, ShapeParams(ident, expr)).vertices
    b = decode_shape(model, ShapeParams(ident.copy(), expr.copy())).vertices
    assert np.array_equal(a, b)


def test_decode_length_mismatch(model):
    with pytest.raises(DimensionError):
        decode_shape(model, ShapeParams(identity=np.zeros(model.num_identity + 1),
                                        expression=np.zeros(model.num_expression)))
    with pytest.raises(DimensionError):
        decode_shape(model, ShapeParams(identity=np.zeros(model.num_identity),
                                        expression=np.zeros(1)))
    with pytest.raises(DimensionError):
        decode_texture(model, TextureParams(coefficients=np.zeros(2)))
