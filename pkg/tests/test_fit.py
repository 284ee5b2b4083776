"""Loss terms and the multi-view coefficient fit."""

import json
import os
import sys
import textwrap

import numpy as np
import pytest

from avatarpipe.assets import Image, LandmarkSet
from avatarpipe.errors import ValidationError
from avatarpipe.fit import (FitProblem, FitView, FitWeights, OptimizerSettings,
                            ViewParams, initialize_problem, load_fit_config,
                            load_fit_result, loss_identity, loss_landmark,
                            loss_rgb, optimize, regularizer, save_fit_result,
                            _evaluate, _Packer)
from avatarpipe.fixtures import toy_model
from avatarpipe.render import CameraParams, Illumination, project

from oracle_helpers import landmark_loss_ref, rgb_loss_ref


def _views_from_capture(capture):
    return list(capture.views)  # already FitView instances


# ---------------------------------------------------------------------------
# landmark loss


def test_landmark_loss_self_consistent(toy_small):
    cam = CameraParams(rotation=[0.1, -0.2, 0.05], translation=[40.0, 50.0], scale=30.0)
    pts3d = toy_small.mean_shape[toy_small.landmark_vertex_ids]
    screen, _ = project(pts3d, cam)
    lm = LandmarkSet(points=screen, confidences=np.ones(len(screen)))
    value, grad = loss_landmark(screen, lm, 96, 96)
    assert abs(value) <= 1e-10
    np.testing.assert_allclose(grad, 0.0, atol=1e-10)


def test_landmark_loss_zero_confidence():
    projected = np.array([[0.0, 0.0], [5.0, 5.0]])
    lm = LandmarkSet(points=projected + 10.0, confidences=np.zeros(2))
    value, _ = loss_landmark(projected, lm, 64, 64)
    assert value == 0.0


def test_landmark_loss_single_offset_point():
    projected = np.array([[10.0, 20.0]])
    lm = LandmarkSet(points=np.array([[13.0, 24.0]]), confidences=np.ones(1))
    value, grad = loss_landmark(projected, lm, 64, 48)
    diag2 = 64 * 64 + 48 * 48
    assert abs(value - 25.0 / diag2) < 1e-12
    np.testing.assert_allclose(grad, [[2 * -3.0 / diag2, 2 * -4.0 / diag2]], atol=1e-12)


def test_landmark_loss_matches_oracle(rng):
    projected = rng.random((20, 2)) * 90
    lm = LandmarkSet(points=rng.random((20, 2)) * 90, confidences=rng.random(20))
    value, _ = loss_landmark(projected, lm, 120, 80)
    expected = landmark_loss_ref(projected, lm.points, lm.confidences, 120, 80)
    assert abs(value - expected) < 1e-10


def test_landmark_loss_gradient_matches_fd(rng):
    projected = rng.random((9, 2)) * 50
    lm = LandmarkSet(points=rng.random((9, 2)) * 50, confidences=rng.random(9))
    _, grad = loss_landmark(projected, lm, 64, 64)
    h = 1e-6
    for i in (0, 4, 8):
        for j in (0, 1):
            p2 = projected.copy()
            p2[i, j] += h
            vp, _ = loss_landmark(p2, lm, 64, 64)
            p2[i, j] -= 2 * h
            vm, _ = loss_landmark(p2, lm, 64, 64)
            fd = (vp - vm) / (2 * h)
            assert abs(grad[i, j] - fd) < 1e-8


# ---------------------------------------------------------------------------
# RGB loss


def test_rgb_loss_identical_images():
    img = Image.from_array(np.random.default_rng(0).random((8, 8, 3)))
    coverage = np.ones((8, 8))
    value, grad = loss_rgb(img, img, coverage)
    assert value == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_rgb_loss_constant_gap():
    rendered = Image.from_array(np.full((6, 6, 3), 0.25))
    source = Image.from_array(np.full((6, 6, 3), 0.75))
    coverage = np.zeros((6, 6))
    coverage[2:4, 2:4] = 1.0
    value, _ = loss_rgb(rendered, source, coverage)
    assert abs(value - 0.5) < 1e-12


def test_rgb_loss_matches_double_loop_oracle(rng):
    rendered = rng.random((10, 12, 3))
    source = rng.random((10, 12, 3))
    coverage = (rng.random((10, 12)) > 0.4).astype(float)
    mask = (rng.random((10, 12)) > 0.3).astype(float)
    value, _ = loss_rgb(Image.from_array(rendered), Image.from_array(source),
                        coverage, mask=Image.from_array(mask[:, :, None]))
    expected = rgb_loss_ref(rendered, source, coverage, mask)
    assert abs(value - expected) < 1e-6


def test_rgb_loss_no_coverage():
    rendered = Image.from_array(np.zeros((4, 4, 3)))
    source = Image.from_array(np.ones((4, 4, 3)))
    value, grad = loss_rgb(rendered, source, np.zeros((4, 4)))
    assert value == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_rgb_loss_gradient_is_scaled_sign(rng):
    rendered = rng.random((5, 5, 3))
    source = rng.random((5, 5, 3))
    coverage = np.ones((5, 5))
    value, grad = loss_rgb(Image.from_array(rendered), Image.from_array(source), coverage)
    n = 25 * 3
    np.testing.assert_allclose(grad, np.sign(rendered - source) / n, atol=1e-12)


# ---------------------------------------------------------------------------
# identity loss via an external provider


def _write_provider(tmp_path, body):
    script = tmp_path / "provider.py"
    script.write_text(textwrap.dedent(body))
    return [sys.executable, str(script)]


def test_identity_loss_without_provider():
    img = Image.from_array(np.full((4, 4, 3), 0.5))
    assert loss_identity(None, img, img) == 0.0


def test_identity_loss_constant_embedding(tmp_path):
    cmd = _write_provider(tmp_path, """
        import sys
        for line in sys.stdin:
            if line.strip():
                print("1.0 2.0 3.0")
    """)
    a = Image.from_array(np.zeros((4, 4, 3)))
    b = Image.from_array(np.ones((4, 4, 3)))
    assert loss_identity(cmd, a, b) == 0.0


def test_identity_loss_mean_color_embedding(tmp_path):
    cmd = _write_provider(tmp_path, """
        import sys
        from PIL import Image
        import numpy as np
        for line in sys.stdin:
            path = line.strip()
            if not path:
                continue
            arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
            print(*arr.reshape(-1, arr.shape[2]).mean(axis=0))
    """)
    # 0.2 and 0.8 hit exact 8-bit levels (51 and 204), so the round trip
    # through the provider's PNG files is lossless
    a = Image.from_array(np.full((4, 4, 3), 0.2))
    b = Image.from_array(np.full((4, 4, 3), 0.8))
    value = loss_identity(cmd, a, b)
    # embeddings are the mean colors; 3 channels each off by 0.6
    assert abs(value - 3 * 0.6 ** 2) < 1e-6


# ---------------------------------------------------------------------------
# regularizer


def test_regularizer_zeros():
    value, (g_id, g_expr, g_tex) = regularizer(np.zeros(8), [np.zeros(4)], np.zeros(8))
    assert value == 0.0
    assert np.all(g_id == 0) and np.all(g_tex == 0) and np.all(g_expr[0] == 0)


def test_regularizer_unit_coefficient():
    ident = np.zeros(8)
    ident[0] = 1.0
    value, (g_id, _, _) = regularizer(ident, [np.zeros(4)], np.zeros(8))
    assert abs(value - 1.0) < 1e-12
    np.testing.assert_allclose(g_id[0], 2.0, atol=1e-12)


def test_regularizer_matches_dot_oracle(rng):
    ident = rng.normal(size=8)
    exprs = [rng.normal(size=4) for _ in range(3)]
    tex = rng.normal(size=8)
    value, _ = regularizer(ident, exprs, tex)
    expected = float(ident @ ident) + float(tex @ tex) \
        + sum(float(e @ e) for e in exprs) / 3
    assert abs(value - expected) < 1e-12


def test_regularizer_expression_average_over_views(rng):
    e = rng.normal(size=4)
    v1, _ = regularizer(np.zeros(8), [e], np.zeros(8))
    v3, _ = regularizer(np.zeros(8), [e, e, e], np.zeros(8))
    assert abs(v1 - v3) < 1e-12


def test_regularizer_group_weights(rng):
    ident, tex = rng.normal(size=8), rng.normal(size=8)
    value, _ = regularizer(ident, [np.zeros(4)], tex, group_weights=(2.0, 1.0, 0.5))
    expected = 2.0 * float(ident @ ident) + 0.5 * float(tex @ tex)
    assert abs(value - expected) < 1e-12


# ---------------------------------------------------------------------------
# optimizer


def test_initialize_problem_starting_point(toy_small, capture_ambient):
    views = _views_from_capture(capture_ambient)
    problem = initialize_problem(toy_small, views)
    assert np.all(problem.identity == 0)
    assert np.all(problem.texture == 0)
    for vp, view in zip(problem.view_params, views):
        np.testing.assert_array_equal(vp.camera.rotation, 0.0)
        assert vp.camera.scale > 0
        # translation aligns centroids at the initial scale
        model_lm = toy_small.mean_shape[toy_small.landmark_vertex_ids][:, :2]
        expected_t = view.landmarks.points.mean(axis=0) - vp.camera.scale * model_lm.mean(axis=0)
        np.testing.assert_allclose(vp.camera.translation, expected_t, atol=1e-9)


def test_optimize_zero_iterations_returns_initial(toy_small, capture_ambient):
    views = _views_from_capture(capture_ambient)
    problem = initialize_problem(toy_small, views,
                                 settings=OptimizerSettings(max_iters=0))
    result = optimize(problem)
    assert result.iterations == 0
    assert not result.converged
    np.testing.assert_array_equal(result.identity, problem.identity)
    np.testing.assert_array_equal(result.texture, problem.texture)


def test_optimize_decreases_loss(toy_small, capture_ambient):
    views = _views_from_capture(capture_ambient)
    init = initialize_problem(toy_small, views,
                              settings=OptimizerSettings(max_iters=0))
    baseline = optimize(init).loss_total
    problem = initialize_problem(toy_small, views,
                                 settings=OptimizerSettings(max_iters=12))
    result = optimize(problem)
    assert result.loss_total <= baseline
    assert result.iterations <= 12


def test_optimize_shares_identity_across_views(toy_small, capture_ambient):
    views = _views_from_capture(capture_ambient)
    problem = initialize_problem(toy_small, views,
                                 settings=OptimizerSettings(max_iters=8))
    result = optimize(problem)
    assert result.identity.shape == (toy_small.num_identity,)
    assert len(result.views) == len(views)
    exprs = [vp.expression for vp in result.views]
    assert not np.allclose(exprs[0], exprs[1])


def test_optimize_regularizer_only_shrinks_coefficients(toy_small, capture_ambient):
    views = _views_from_capture(capture_ambient)[:1]
    problem = initialize_problem(
        toy_small, views,
        weights=FitWeights(rgb=0.0, landmark=0.0, identity=0.0, regularizer=1.0),
        settings=OptimizerSettings(max_iters=30))
    rng = np.random.default_rng(5)
    problem.identity = rng.normal(size=toy_small.num_identity)
    problem.texture = rng.normal(size=toy_small.num_texture)
    before = float(problem.identity @ problem.identity + problem.texture @ problem.texture)
    result = optimize(problem)
    after = float(result.identity @ result.identity + result.texture @ result.texture)
    assert after < 0.1 * before


def test_objective_gradient_matches_fd(toy_small, capture_ambient, rng):
    views = _views_from_capture(capture_ambient)[:2]
    problem = initialize_problem(toy_small, views)
    packer = _Packer(toy_small, len(views))
    x = packer.pack(problem)
    x += rng.normal(size=x.size) * 0.01  # move off the all-zeros kink-free start
    value, grad, _terms = _evaluate(problem, packer, x)
    h = 1e-5
    picks = rng.choice(x.size, size=14, replace=False)
    for j in picks:
        xp = x.copy()
        xp[j] += h
        vp, _, _ = _evaluate(problem, packer, xp, need_grad=False)
        xp[j] -= 2 * h
        vm, _, _ = _evaluate(problem, packer, xp, need_grad=False)
        fd = (vp - vm) / (2 * h)
        ref = max(abs(fd), np.abs(grad).max() * 1e-4, 1e-8)
        assert abs(grad[j] - fd) <= 1e-2 * ref, j


def test_fit_problem_requires_views(toy_small):
    with pytest.raises(ValidationError):
        FitProblem(model=toy_small, views=[],
                   identity=np.zeros(8), texture=np.zeros(8), view_params=[])


def test_fit_result_round_trip(toy_small, capture_ambient, tmp_path):
    views = _views_from_capture(capture_ambient)
    problem = initialize_problem(toy_small, views,
                                 settings=OptimizerSettings(max_iters=2))
    result = optimize(problem)
    save_fit_result(result, tmp_path / "fit.json")
    back = load_fit_result(tmp_path / "fit.json")
    np.testing.assert_allclose(back.identity, result.identity, atol=1e-12)
    np.testing.assert_allclose(back.texture, result.texture, atol=1e-12)
    assert back.iterations == result.iterations
    assert back.converged == result.converged
    for vb, vr in zip(back.views, result.views):
        np.testing.assert_allclose(vb.camera.rotation, vr.camera.rotation, atol=1e-12)
        np.testing.assert_allclose(vb.expression, vr.expression, atol=1e-12)
        np.testing.assert_allclose(vb.illumination.sh_coefficients,
                                   vr.illumination.sh_coefficients, atol=1e-12)


# ---------------------------------------------------------------------------
# fit config files


def test_fit_config_defaults_and_overrides(tmp_path):
    path = tmp_path / "fit.json"
    path.write_text(json.dumps({
        "weights": {"rgb": 2.0},
        "optimizer": {"max_iters": 17},
        "views": [{"image": "a.png", "landmarks": "a.txt"}],
    }))
    cfg = load_fit_config(path)
    assert cfg.weights.rgb == 2.0
    assert cfg.weights.landmark == FitWeights().landmark
    assert cfg.settings.max_iters == 17
    assert cfg.view_paths[0]["image"] == "a.png"
    assert cfg.view_paths[0]["mask"] is None


def test_fit_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "fit.json"
    path.write_text(json.dumps({"wieghts": {"rgb": 2.0}}))
    with pytest.raises(ValidationError):
        load_fit_config(path)


def test_fit_config_rejects_unknown_weight(tmp_path):
    path = tmp_path / "fit.json"
    path.write_text(json.dumps({"weights": {"rgb2": 2.0}}))
    with pytest.raises(ValidationError):
        load_fit_config(path)


def test_fit_config_view_needs_paths(tmp_path):
    path = tmp_path / "fit.json"
    path.write_text(json.dumps({"views": [{"image": "a.png"}]}))
    with pytest.raises(ValidationError):
        load_fit_config(path)
