import logging
import math
import os

import numpy as np
import pandas as pd
import pytest

from config import OptimizeConfig
from diffrender import RenderConfig, render_all, render_loss_and_grad
from errors import ArgumentError, ConfigurationError
from mesh_io import TriMesh, genus, make_icosphere
from optimizer import (
    HISTORY_COLUMNS,
    AdamState,
    InversionReference,
    LossBreakdown,
    adam_step,
    build_bilaplacian,
    flip_count,
    inversion_penalty,
    laplacian_smooth,
    optimize,
    save_history,
    smoothness,
)
from schemas import Camera
from tests.conftest import square_mesh


def _triangle(scale=1.0):
    v = np.array([[-0.6, -0.5, 0.0], [0.7, -0.4, 0.0], [0.1, 0.8, 0.0]])
    c = v.mean(axis=0)
    return TriMesh(c + scale * (v - c), np.array([[0, 1, 2]]))


def _cam(resolution=24):
    return Camera(position=(0.0, 0.0, 4.0), look_at=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), fov=40.0,
                  resolution=(resolution, resolution))


def _plain(steps, **kw):
    return OptimizeConfig(steps=steps, w1=0.0, w2=0.0, checkpoint_every=0, **kw)


def test_bilaplacian_of_a_triangle():
    bilap = build_bilaplacian(_triangle())
    assert np.array_equal(bilap.graph.toarray(), [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    assert np.array_equal(bilap.matrix.toarray(), [[6, -3, -3], [-3, 6, -3], [-3, -3, 6]])


def test_bilaplacian_structure(torus):
    bilap = build_bilaplacian(torus)
    dense = bilap.matrix.toarray()
    assert np.allclose(dense, dense.T)
    assert np.allclose(dense.sum(axis=1), 0.0)
    rng = np.random.default_rng(3)
    for _ in range(100):
        value, _ = smoothness(rng.normal(size=(torus.n_vertices, 3)), bilap)
        assert value >= 0.0


def test_smoothness_values(torus):
    bilap = build_bilaplacian(torus)
    value, grad = smoothness(np.tile([1.0, -2.0, 0.5], (torus.n_vertices, 1)), bilap)
    assert value == 0.0
    assert not grad.any()
    x = torus.vertices
    assert smoothness(2 * x, bilap)[0] == pytest.approx(4 * smoothness(x, bilap)[0], rel=1e-12)
    with pytest.raises(ArgumentError):
        smoothness(x[:-1], bilap)


def test_smoothness_gradient():
    mesh = make_icosphere(0)
    bilap = build_bilaplacian(mesh)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(mesh.n_vertices, 3))
    _, grad = smoothness(x, bilap)
    h = 1e-5
    for i in range(mesh.n_vertices):
        for k in range(3):
            plus, minus = x.copy(), x.copy()
            plus[i, k] += h
            minus[i, k] -= h
            fd = (smoothness(plus, bilap)[0] - smoothness(minus, bilap)[0]) / (2 * h)
            assert fd == pytest.approx(grad[i, k], rel=1e-6, abs=1e-8)


def test_inversion_is_zero_at_reference(torus):
    value, grad = inversion_penalty(torus.vertices, torus)
    assert value == 0.0
    assert not grad.any()
    assert flip_count(torus.vertices, torus) == 0


def test_reflected_face_costs_one():
    ref = TriMesh(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), np.array([[0, 1, 2]]))
    mirrored = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    value, grad = inversion_penalty(mirrored, ref)
    assert value == pytest.approx(1.0, abs=1e-12)
    assert np.abs(grad).max() > 0
    assert flip_count(mirrored, ref) == 1


def test_inversion_gradient_near_a_flip():
    ref = square_mesh()
    x = ref.vertices.copy()
    x[2] = [1.0, -0.3, 0.05]
    value, grad = inversion_penalty(x, ref)
    assert value > 0
    h = 1e-6
    for i in range(4):
        for k in range(3):
            plus, minus = x.copy(), x.copy()
            plus[i, k] += h
            minus[i, k] -= h
            fd = (inversion_penalty(plus, ref)[0] - inversion_penalty(minus, ref)[0]) / (2 * h)
            if abs(grad[i, k]) > 1e-8:
                assert fd == pytest.approx(grad[i, k], rel=1e-4)
            else:
                assert abs(fd) < 1e-6


def test_degenerate_reference():
    flat = TriMesh(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(ConfigurationError):
        InversionReference.from_mesh(flat)


def test_adam_first_step():
    state = AdamState.fresh(1, lr=0.1)
    new_state, params = adam_step(state, np.array([1.0]), np.array([0.0]))
    assert params[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)
    assert new_state.t == 1 and state.t == 0
    assert not state.m.any()


def test_adam_zero_gradient_and_signs():
    state = AdamState.fresh(4)
    p0 = np.array([1.0, -2.0, 3.0, 0.5])
    _, p1 = adam_step(state, np.zeros(4), p0)
    assert np.array_equal(p1, p0)
    g = np.array([3.0, -0.2, 1e-3, -50.0])
    _, p2 = adam_step(state, g, p0)
    assert (np.sign(p2 - p0) == -np.sign(g)).all()
    with pytest.raises(ArgumentError):
        adam_step(state, np.zeros(3), p0)


def test_loss_breakdown_total():
    b = LossBreakdown(step=0, phi=0.5, smooth=2.0, inversion=0.25, w1=0.1, w2=4.0)
    assert b.total == 0.5 + 0.1 * 2.0 + 4.0 * 0.25


def test_own_render_is_stationary(torus):
    cams = [_cam(20), Camera(position=(4.0, 1.0, 1.0), look_at=(0.0, 0.0, 0.0), resolution=(20, 20))]
    targets = render_all(torus, cams)
    final, history = optimize(torus, cams, targets, _plain(3, lr=0.01), progress=False)
    assert len(history) == 4
    assert all(h.phi == 0.0 for h in history)
    assert np.array_equal(final.vertices, torus.vertices)


def test_matches_hand_rolled_descent():
    mesh0 = _triangle(0.8)
    cams = [_cam()]
    targets = render_all(_triangle(1.0), cams)
    cfg = _plain(10, lr=0.005)
    _, history = optimize(mesh0, cams, targets, cfg, progress=False)

    state = AdamState.fresh(9, lr=0.005)
    params = mesh0.vertices.ravel().copy()
    expected = []
    for _ in range(10):
        loss, grad = render_loss_and_grad(mesh0.with_vertices(params), cams, targets)
        expected.append(loss)
        state, params = adam_step(state, grad.ravel(), params)
    for h, e in zip(history, expected):
        assert h.phi == pytest.approx(e, rel=1e-2)
    assert history[-1].phi < history[0].phi


def test_runs_are_reproducible():
    cams = [_cam()]
    targets = render_all(_triangle(1.0), cams)
    cfg = OptimizeConfig(steps=5, lr=0.01, checkpoint_every=0)
    a, ha = optimize(_triangle(0.8), cams, targets, cfg, progress=False)
    b, hb = optimize(_triangle(0.8), cams, targets, cfg, progress=False)
    assert np.array_equal(a.vertices, b.vertices)
    assert [h.total for h in ha] == [h.total for h in hb]


def test_preconditioned_run(torus):
    cams = [_cam(16)]
    start = torus.with_vertices(torus.vertices * 0.9)
    targets = render_all(torus, cams)
    cfg = OptimizeConfig(steps=3, lr=0.01, precondition=True, checkpoint_every=0)
    final, history = optimize(start, cams, targets, cfg, progress=False)
    assert len(history) == 4
    assert all(math.isfinite(h.total) for h in history)
    assert not np.array_equal(final.vertices, start.vertices)


def test_checkpoints_and_history(tmp_path):
    cams = [_cam()]
    targets = render_all(_triangle(1.0), cams)
    cfg = OptimizeConfig(steps=4, lr=0.01, checkpoint_every=2)
    _, history = optimize(_triangle(0.8), cams, targets, cfg, checkpoint_dir=str(tmp_path / "ckpt"),
                          progress=False)
    assert sorted(os.listdir(tmp_path / "ckpt")) == ["step_00002.obj", "step_00004.obj"]
    save_history(history, tmp_path / "loss.csv")
    frame = pd.read_csv(tmp_path / "loss.csv")
    assert list(frame.columns) == HISTORY_COLUMNS
    assert list(frame["step"]) == [0, 1, 2, 3, 4]
    for row, h in zip(frame.itertuples(), history):
        assert row.total == h.total
        assert row.total == pytest.approx(row.phi + cfg.w1 * row.smooth + cfg.w2 * row.inversion, rel=1e-12)


def test_genus_mismatch_is_only_a_warning(torus, caplog):
    cams = [_cam(12)]
    targets = render_all(torus, cams)
    with caplog.at_level(logging.WARNING):
        _, history = optimize(torus, cams, targets, _plain(1), target_genus=2, progress=False)
    assert len(history) == 2
    assert any("genus" in r.getMessage() for r in caplog.records)


def test_reference_must_share_connectivity(torus):
    cams = [_cam(12)]
    targets = render_all(torus, cams)
    other = TriMesh(torus.vertices, torus.faces[:, [0, 2, 1]])
    with pytest.raises(ArgumentError):
        optimize(torus, cams, targets, _plain(1), reference=other, progress=False)


def test_laplacian_smoothing_keeps_topology(torus):
    smooth = laplacian_smooth(torus, rounds=10, step=0.5)
    assert np.array_equal(smooth.faces, torus.faces)
    assert genus(smooth) == 1
    assert not np.array_equal(smooth.vertices, torus.vertices)
    assert np.array_equal(laplacian_smooth(torus, rounds=0).vertices, torus.vertices)
    with pytest.raises(ArgumentError):
        laplacian_smooth(torus, step=1.5)
