"""
Camera sets: uniform sphere, loop-guided, and the collaborative merge of both
"""
import logging
import math
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ArgumentError, FrameError
from mesh_io import TriMesh, point_inside, ray_intersections
from schemas import Camera, CameraList
from topo_loops import LoopCycle, LoopKind

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
WORLD_Z = np.array([0.0, 0.0, 1.0])
WORLD_X = np.array([1.0, 0.0, 0.0])


def _vec(v) -> Tuple[float, float, float]:
    return tuple(float(c) for c in v)


def fibonacci_directions(n: int) -> np.ndarray:
    """Offset Fibonacci lattice on the unit sphere; a single direction is +z"""
    if n == 1:
        return WORLD_Z[None, :].copy()
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def uniform_sphere_cameras(n: int, radius: float, center=(0.0, 0.0, 0.0), fov: float = 40.0,
                           resolution: Tuple[int, int] = (64, 64)) -> List[Camera]:
    """
    n cameras on a sphere around ``center``, all looking at it.
    Up is world z, or world x where the view is (nearly) vertical.
    """
    if n < 1:
        raise ArgumentError("camera count must be at least 1")
    if not radius > 0:
        raise ArgumentError("sphere radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    cams = []
    for d in fibonacci_directions(n):
        up = WORLD_Z if np.linalg.norm(np.cross(d, WORLD_Z)) > 1e-6 else WORLD_X
        cams.append(Camera(position=_vec(center + radius * d), look_at=_vec(center), up=_vec(up),
                           vertical_fov=fov, resolution=resolution))
    return cams


def loop_frame(loop: LoopCycle, mesh: TriMesh) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    (centroid, unit normal, mean radius) of a loop.

    The normal is the least-variance axis of the loop vertices, pointing to
    the side whose ray from the centroid crosses the surface fewer times;
    on a tie the loop's winding decides (right-hand rule).
    """
    seq = list(loop.vertex_sequence)
    if len(seq) < 3:
        raise FrameError(f"loop frame needs at least 3 vertices, got {len(seq)}")
    pts = mesh.vertices[seq]
    centroid = pts.mean(axis=0)
    rel = pts - centroid
    radius = float(np.linalg.norm(rel, axis=1).mean())
    eigvals, eigvecs = np.linalg.eigh(rel.T @ rel / len(pts))
    if not radius > 0 or eigvals[1] <= 1e-12 * max(eigvals[2], 1e-300):
        raise FrameError("loop vertices are collinear")
    normal = eigvecs[:, 0]

    ahead = len(ray_intersections(mesh, centroid, normal))
    behind = len(ray_intersections(mesh, centroid, -normal))
    if behind < ahead:
        normal = -normal
    elif behind == ahead:
        winding = np.cross(rel, np.roll(rel, -1, axis=0)).sum(axis=0)
        if float(winding @ normal) < 0:
            normal = -normal
    return centroid, normal / np.linalg.norm(normal), radius


def _perpendicular(normal: np.ndarray, hint: np.ndarray) -> np.ndarray:
    a = hint - (hint @ normal) * normal
    if np.linalg.norm(a) < 1e-9:
        axis = np.eye(3)[int(np.argmin(np.abs(normal)))]
        a = axis - (axis @ normal) * normal
    return a / np.linalg.norm(a)


def _push_outside(position: np.ndarray, target: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Slide a camera along its view ray until it leaves the bounding sphere"""
    center, rho = mesh.bounding_sphere()
    u = position - target
    u /= np.linalg.norm(u)
    limit = 1.05 * rho
    # |target + t u - center| = limit, larger root
    w = target - center
    b = float(u @ w)
    c = float(w @ w) - limit * limit
    t = -b + math.sqrt(max(b * b - c, 0.0))
    return target + t * u


def ph_guided_cameras(loops: Sequence[LoopCycle], mesh: TriMesh, per_loop: int = 4, distance_factor: float = 6.0,
                      cone_angle: float = 35.0, fov: float = 40.0, resolution: Tuple[int, int] = (64, 64),
                      include_handles: bool = False) -> List[Camera]:
    """
    Views through tunnel loops.

    Per loop: axial cameras at centroid +/- normal * (distance_factor * radius)
    and ``per_loop - 2`` more on a cone of ``cone_angle`` degrees around the
    normal, evenly spaced in azimuth from the loop's first vertex. With
    ``per_loop == 1`` only the +normal view is kept. Every camera looks at the
    loop centroid; one that starts inside the solid is moved back along its
    view ray out of the bounding sphere.
    """
    if per_loop < 1:
        raise ArgumentError("per_loop must be at least 1")
    if not distance_factor > 0:
        raise ArgumentError("distance_factor must be positive")
    cams = []
    pushed = 0
    for lc in loops:
        if lc.kind is not LoopKind.TUNNEL and not include_handles:
            continue
        centroid, normal, radius = loop_frame(lc, mesh)
        dist = distance_factor * radius
        a = _perpendicular(normal, mesh.vertices[lc.vertex_sequence[0]] - centroid)
        b = np.cross(normal, a)
        views = [(normal, a)]
        if per_loop >= 2:
            views.append((-normal, a))
        half = math.radians(cone_angle)
        n_cone = max(per_loop - 2, 0)
        for k in range(n_cone):
            phi = 2.0 * math.pi * k / n_cone
            d = math.cos(half) * normal + math.sin(half) * (math.cos(phi) * a + math.sin(phi) * b)
            views.append((d, normal))
        for d, up in views:
            position = centroid + dist * d
            if point_inside(mesh, position):
                position = _push_outside(position, centroid, mesh)
                pushed += 1
            cams.append(Camera(position=_vec(position), look_at=_vec(centroid), up=_vec(up),
                               vertical_fov=fov, resolution=resolution))
    if pushed:
        logger.debug("%d guided cameras started inside the solid and were moved out", pushed)
    return cams


def _angle_deg(u: np.ndarray, v: np.ndarray) -> float:
    cos = float(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def merge_collaborative(uniform: Sequence[Camera], guided: Sequence[Camera], min_angle: float = 10.0,
                        center=None) -> List[Camera]:
    """
    Uniform cameras not within ``min_angle`` degrees (seen from ``center``)
    of a guided camera, followed by all guided cameras.
    """
    if not guided:
        return list(uniform)
    if center is None:
        center = uniform[0].look_at if uniform else guided[0].look_at
    center = np.asarray(center, dtype=np.float64)
    guided_dirs = [np.subtract(g.position, center) for g in guided]
    guided_dirs = [d for d in guided_dirs if np.linalg.norm(d) > 1e-12]
    kept = []
    for cam in uniform:
        d = np.subtract(cam.position, center)
        if np.linalg.norm(d) > 1e-12 and any(_angle_deg(d, g) < min_angle for g in guided_dirs):
            continue
        kept.append(cam)
    return kept + list(guided)


def collaborative_cameras(guided: Sequence[Camera], total: int, radius: float, center=(0.0, 0.0, 0.0),
                          min_angle: float = 10.0, fov: float = 40.0,
                          resolution: Tuple[int, int] = (64, 64)) -> List[Camera]:
    """
    Merged set with exactly ``total`` cameras: the uniform lattice grows until
    enough of it survives deduplication, then surplus uniform views are dropped
    from the end.
    """
    if total < 1:
        raise ArgumentError("total camera count must be at least 1")
    guided = list(guided)
    if len(guided) >= total:
        logger.warning("⚠️  %d guided cameras exceed the budget of %d; truncating", len(guided), total)
        return guided[:total]
    need = total - len(guided)
    n = need
    while True:
        uniform = uniform_sphere_cameras(n, radius, center, fov, resolution)
        merged = merge_collaborative(uniform, guided, min_angle, center)
        kept = merged[:len(merged) - len(guided)]
        if len(kept) >= need:
            return kept[:need] + guided
        n += need - len(kept)


def save_cameras(cameras: Sequence[Camera], path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CameraList.dump_json(list(cameras), by_alias=True, indent=2))


def load_cameras(path) -> List[Camera]:
    with open(path, "rb") as fh:
        return CameraList.validate_json(fh.read())
