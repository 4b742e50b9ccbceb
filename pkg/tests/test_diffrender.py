import math
import warnings

import numpy as np
import pytest

from diffrender import ImageBuffer, RenderConfig, render_all, render_loss_and_grad, render_silhouette
from errors import ArgumentError, ParseError
from mesh_io import TriMesh, make_icosphere
from optimizer import flip_count
from schemas import Camera

# focal length of 20 px at 32x32: world x maps to 2x + 16 px on the z = 0 plane seen from z = 10
FOV_20PX = math.degrees(2.0 * math.atan(0.8))


def _front_cam(width=32, height=32, fov=FOV_20PX):
    return Camera(position=(0.0, 0.0, 10.0), look_at=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                  fov=fov, resolution=(width, height))


def _triangle(scale=1.0):
    # screen corners (10, 22), (23, 20), (17, 8): no edge passes through a pixel centre
    v = np.array([[-3.0, -3.0, 0.0], [3.5, -2.0, 0.0], [0.5, 4.0, 0.0]])
    c = v.mean(axis=0)
    return TriMesh(c + scale * (v - c), np.array([[0, 1, 2]]))


def test_far_and_deep_pixels():
    big = TriMesh(np.array([[-10.0, -10.0, 0.0], [10.0, -10.0, 0.0], [0.0, 10.0, 0.0]]), np.array([[0, 1, 2]]))
    img = render_silhouette(big, _front_cam())
    assert img.values[16, 16] >= 1.0 - (1.0 - 1.0 / (1.0 + math.exp(-4.0)))

    small = _triangle(0.2)
    img = render_silhouette(small, _front_cam())
    assert img.values[0, 0] == 0.0
    assert img.values.max() <= 1.0 and img.values.min() >= 0.0


def test_torus_seen_along_its_axis(torus):
    cam = Camera(position=(0.0, 0.0, 12.0), look_at=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), fov=40.0,
                 resolution=(64, 64))
    img = render_silhouette(torus, cam, RenderConfig(tau=1.0))
    assert img.values[32, 32] < 0.1
    assert img.values[32, 46] > 0.9
    assert img.values[32, 17] > 0.9


def test_backfacing_triangles_still_cover():
    front = render_silhouette(_triangle(), _front_cam())
    flipped = TriMesh(_triangle().vertices, np.array([[0, 2, 1]]))
    back = render_silhouette(flipped, _front_cam())
    assert np.allclose(front.values, back.values, atol=1e-12)


def test_rendering_is_deterministic(torus):
    cam = Camera(position=(3.0, -9.0, 5.0), look_at=(0.0, 0.0, 0.0), fov=45.0, resolution=(40, 30))
    a = render_silhouette(torus, cam)
    b = render_silhouette(torus, cam)
    assert a.values.shape == (30, 40)
    assert np.array_equal(a.values, b.values)


def test_enlarging_a_triangle_never_darkens():
    small = render_silhouette(_triangle(1.0), _front_cam())
    big = render_silhouette(_triangle(1.3), _front_cam())
    assert (big.values >= small.values).all()
    assert big.values.sum() > small.values.sum()


def test_behind_the_camera_is_skipped():
    behind = TriMesh(_triangle().vertices + [0.0, 0.0, 20.0], np.array([[0, 1, 2]]))
    assert render_silhouette(behind, _front_cam()).values.max() == 0.0


def test_straddling_triangle_is_clipped():
    # one corner behind the camera, two in front
    mesh = TriMesh(np.array([[-2.0, -2.0, 0.0], [2.0, -2.0, 0.0], [0.0, 1.0, 15.0]]), np.array([[0, 1, 2]]))
    img = render_silhouette(mesh, _front_cam())
    assert np.isfinite(img.values).all()
    assert img.values.max() > 0.5


def test_loss_vanishes_at_its_own_render(torus):
    cams = [Camera(position=(0.0, -8.0, 6.0), look_at=(0.0, 0.0, 0.0), resolution=(32, 32)),
            Camera(position=(7.0, 2.0, -5.0), look_at=(0.0, 0.0, 0.0), resolution=(24, 24))]
    targets = render_all(torus, cams)
    loss, grad = render_loss_and_grad(torus, cams, targets)
    assert loss == 0.0
    assert grad.shape == torus.vertices.shape
    assert np.abs(grad).max() <= 1e-12


def test_gradient_matches_central_differences():
    mesh = _triangle()
    cams = [_front_cam()]
    targets = [ImageBuffer(32, 32, np.full((32, 32), 0.5))]
    _, grad = render_loss_and_grad(mesh, cams, targets)
    h = 1e-4
    checked = 0
    for vi in range(3):
        for k in range(3):
            plus = mesh.vertices.copy()
            minus = mesh.vertices.copy()
            plus[vi, k] += h
            minus[vi, k] -= h
            lp, _ = render_loss_and_grad(mesh.with_vertices(plus), cams, targets)
            lm, _ = render_loss_and_grad(mesh.with_vertices(minus), cams, targets)
            fd = (lp - lm) / (2 * h)
            if abs(grad[vi, k]) > 1e-6:
                assert abs(fd - grad[vi, k]) <= 1e-3 * abs(grad[vi, k])
                checked += 1
    assert checked >= 6


def _random_scene(rng):
    """Jittered 80-face icosphere, a target from a second jitter, one camera 3.5 units out"""
    base = make_icosphere(1)
    scale = rng.uniform(0.6, 1.2, size=3)
    mesh = base.with_vertices(base.vertices * scale + rng.normal(0.0, 0.05, base.vertices.shape))
    other = base.with_vertices(base.vertices * scale + rng.normal(0.0, 0.05, base.vertices.shape))
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    up = (0.0, 1.0, 0.0) if abs(d[2]) > 0.9 else (0.0, 0.0, 1.0)
    cam = Camera(position=tuple(float(c) for c in 3.5 * d), look_at=(0.0, 0.0, 0.0), up=up, fov=50.0,
                 resolution=(32, 32))
    return mesh, [cam], render_all(other, [cam])


def test_gradients_of_random_scenes_match_central_differences():
    rng = np.random.default_rng(7)
    cfg = RenderConfig(tau=1.0)
    h = 1e-4
    errors = []
    for _ in range(10):
        mesh, cams, targets = _random_scene(rng)
        assert len(mesh.faces) <= 200
        _, grad = render_loss_and_grad(mesh, cams, targets, cfg)
        for flat in rng.choice(mesh.vertices.size, size=15, replace=False):
            vi, k = divmod(int(flat), 3)
            if abs(grad[vi, k]) <= 1e-6:
                continue
            plus = mesh.vertices.copy()
            minus = mesh.vertices.copy()
            plus[vi, k] += h
            minus[vi, k] -= h
            lp, _ = render_loss_and_grad(mesh.with_vertices(plus), cams, targets, cfg)
            lm, _ = render_loss_and_grad(mesh.with_vertices(minus), cams, targets, cfg)
            errors.append(abs((lp - lm) / (2 * h) - grad[vi, k]) / abs(grad[vi, k]))
    errors = np.array(errors)
    assert len(errors) >= 30
    assert np.mean(errors <= 1e-2) >= 0.95
    assert np.median(errors) < 1e-3


def test_read_only_targets_raise_no_warning(torus):
    cam = Camera(position=(0.0, -8.0, 6.0), look_at=(0.0, 0.0, 0.0), resolution=(16, 16))
    target = ImageBuffer(16, 16, np.full((16, 16), 0.5))
    assert not target.values.flags.writeable
    with warnings.catch_warnings():
        warnings.filterwarnings("error", message=".*not writable")
        render_loss_and_grad(torus, [cam], [target])
        flip_count(torus.vertices, torus)


def test_loss_ignores_a_shared_translation(torus):
    shift = np.array([0.7, -1.2, 2.5])
    cams = [Camera(position=(0.0, -8.0, 6.0), look_at=(0.0, 0.0, 0.0), resolution=(32, 32))]
    moved = [Camera(position=tuple(np.add(c.position, shift)), look_at=tuple(np.add(c.look_at, shift)),
                    up=c.up, fov=c.vertical_fov, resolution=c.resolution) for c in cams]
    targets = [ImageBuffer(32, 32, np.full((32, 32), 0.25))]
    l0, _ = render_loss_and_grad(torus, cams, targets)
    l1, _ = render_loss_and_grad(torus.with_vertices(torus.vertices + shift), moved, targets)
    assert abs(l1 - l0) < 1e-12


def test_target_checks(torus):
    cam = _front_cam()
    with pytest.raises(ArgumentError):
        render_loss_and_grad(torus, [cam], [])
    with pytest.raises(ArgumentError):
        render_loss_and_grad(torus, [cam], [ImageBuffer(16, 16, np.zeros((16, 16)))])


def test_degenerate_camera():
    cam = Camera.model_construct(position=(0.0, 0.0, 1.0), look_at=(0.0, 0.0, 1.0), up=(0.0, 1.0, 0.0),
                                 vertical_fov=40.0, resolution=(8, 8))
    with pytest.raises(ArgumentError):
        render_silhouette(_triangle(), cam)
    with pytest.raises(ArgumentError):
        RenderConfig(tau=0.0)


def test_image_buffer_range():
    with pytest.raises(ArgumentError):
        ImageBuffer(2, 1, np.array([[0.5, 1.5]]))
    with pytest.raises(ArgumentError):
        ImageBuffer(2, 2, np.zeros((1, 2)))


def test_image_files(tmp_path):
    values = np.linspace(0.0, 1.0, 12).reshape(3, 4)
    img = ImageBuffer.from_array(values)
    img.save_raw(tmp_path / "view.raw")
    raw = ImageBuffer.load_raw(tmp_path / "view.raw")
    assert (raw.width, raw.height) == (4, 3)
    assert np.allclose(raw.values, values, atol=1e-7)

    img.save_png(tmp_path / "view.png")
    png = ImageBuffer.load_png(tmp_path / "view.png")
    assert np.abs(png.values - values).max() <= 0.5 / 255.0 + 1e-12

    (tmp_path / "short.raw").write_bytes(b"\x04\x00\x00\x00\x03\x00\x00\x00" + bytes(4))
    with pytest.raises(ParseError):
        ImageBuffer.load_raw(tmp_path / "short.raw")
