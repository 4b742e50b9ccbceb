"""
Reconstruction metrics: Chamfer distance and volume IoU on unit-box meshes
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from config import MetricsConfig
from errors import ArgumentError
from mesh_io import TriMesh, sample_surface

logger = logging.getLogger(__name__)

UNIT_BOX = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
JITTER = 1e-7
# barycentric slack under which a ray is treated as hitting an edge or vertex
EDGE_TOL = 1e-12
MAX_RECASTS = 8


def _mean_nearest(src: np.ndarray, dst: np.ndarray) -> float:
    _, idx = cKDTree(dst).query(src, k=1)
    return float(np.linalg.norm(src - dst[idx], axis=1).mean())


def chamfer(a: TriMesh, b: TriMesh, n: int, seed: int) -> float:
    """
    Symmetric mean nearest-neighbour distance between ``n`` area-weighted
    samples on each mesh, both drawn with ``seed``.
    """
    for name, mesh in (("first", a), ("second", b)):
        if not len(mesh.faces):
            raise ArgumentError(f"{name} mesh is empty")
    pa = sample_surface(a, n, seed)
    pb = sample_surface(b, n, seed)
    return 0.5 * (_mean_nearest(pa, pb) + _mean_nearest(pb, pa))


def _cross2(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _barycentric(tri_yz: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(..., 3) barycentric coordinates of yz points ``q`` in projected triangles ``tri_yz`` (..., 3, 2)"""
    p0, p1, p2 = tri_yz[..., 0, :], tri_yz[..., 1, :], tri_yz[..., 2, :]
    d = _cross2(p1 - p0, p2 - p0)
    b0 = _cross2(p2 - p1, q - p1) / d
    b1 = _cross2(p0 - p2, q - p2) / d
    b2 = _cross2(p1 - p0, q - p0) / d
    return np.stack([b0, b1, b2], axis=-1)


def _grid_pairs(tri_yz: np.ndarray, lo: np.ndarray, cell: np.ndarray, res: int) -> Tuple[np.ndarray, np.ndarray]:
    """(face, flat row) pairs for row centres inside each face's yz bounding box"""
    bmin = tri_yz.min(axis=1)
    bmax = tri_yz.max(axis=1)
    j_lo = np.clip(np.ceil((bmin[:, 0] - lo[1]) / cell[1] - 0.5), 0, res).astype(np.int64)
    j_hi = np.clip(np.floor((bmax[:, 0] - lo[1]) / cell[1] - 0.5), -1, res - 1).astype(np.int64)
    k_lo = np.clip(np.ceil((bmin[:, 1] - lo[2]) / cell[2] - 0.5), 0, res).astype(np.int64)
    k_hi = np.clip(np.floor((bmax[:, 1] - lo[2]) / cell[2] - 0.5), -1, res - 1).astype(np.int64)
    nj = np.maximum(j_hi - j_lo + 1, 0)
    nk = np.maximum(k_hi - k_lo + 1, 0)
    counts = nj * nk
    face = np.repeat(np.arange(len(tri_yz)), counts)
    if not len(face):
        return face, face
    k = np.arange(len(face)) - np.repeat(np.cumsum(counts) - counts, counts)
    j = j_lo[face] + k // nk[face]
    kk = k_lo[face] + k % nk[face]
    return face, j * res + kk


def _crossings(tri: np.ndarray, face: np.ndarray, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For each (face, yz point) pair: hit flag, x of the hit, degenerate flag"""
    bary = _barycentric(tri[face][:, :, 1:], q)
    hit = (bary >= -EDGE_TOL).all(axis=1)
    degenerate = hit & (bary <= EDGE_TOL).any(axis=1)
    x = (bary * tri[face][:, :, 0]).sum(axis=1)
    return hit, x, degenerate


def voxelize(mesh: TriMesh, grid_res: int, bounds: Sequence[Sequence[float]] = UNIT_BOX) -> np.ndarray:
    """
    Occupancy of a ``grid_res``^3 grid, indexed [x, y, z].

    Each (y, z) row is a ray along +x through the voxel centres; a centre is
    inside when an odd number of crossings lie before it. Rows touching an
    edge or vertex are re-cast with a small fixed yz offset.
    """
    if grid_res < 1:
        raise ArgumentError("grid resolution must be positive")
    mesh.check_closed_manifold()
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    if not (hi > lo).all():
        raise ArgumentError("voxel bounds must have positive extent")
    cell = (hi - lo) / grid_res
    centres = lo[None, :] + (np.arange(grid_res)[:, None] + 0.5) * cell[None, :]

    tri = mesh.vertices[mesh.faces]
    facing = np.abs(_cross2(tri[:, 1, 1:] - tri[:, 0, 1:], tri[:, 2, 1:] - tri[:, 0, 1:])) > 0
    tri = tri[facing]

    face, row = _grid_pairs(tri[:, :, 1:], lo, cell, grid_res)
    q = np.stack([centres[row // grid_res, 1], centres[row % grid_res, 2]], axis=1)
    hit, x, degenerate = _crossings(tri, face, q)
    bad_rows = np.unique(row[degenerate])

    rows: List[Optional[np.ndarray]] = [None] * (grid_res * grid_res)
    keep = hit & ~np.isin(row, bad_rows)
    order = np.lexsort((x[keep], row[keep]))
    kept_rows, kept_x = row[keep][order], x[keep][order]
    bounds_idx = np.searchsorted(kept_rows, np.arange(grid_res * grid_res + 1))
    for r in np.unique(kept_rows):
        rows[r] = kept_x[bounds_idx[r]:bounds_idx[r + 1]]

    all_faces = np.arange(len(tri))
    for r in bad_rows:
        y, z = centres[r // grid_res, 1], centres[r % grid_res, 2]
        for attempt in range(1, MAX_RECASTS + 1):
            shift = attempt * JITTER * cell[1:] * np.array([1.0, 0.7548776662466927])
            qq = np.broadcast_to(np.array([y, z]) + shift, (len(tri), 2))
            h, xx, deg = _crossings(tri, all_faces, qq)
            if not deg.any():
                break
        else:
            logger.warning("⚠️  row %d still grazes an edge after %d re-casts", r, MAX_RECASTS)
        rows[r] = np.sort(xx[h])

    occupancy = np.zeros((grid_res, grid_res, grid_res), dtype=bool)
    xs = centres[:, 0]
    for r, hits in enumerate(rows):
        if hits is None or not len(hits):
            continue
        occupancy[:, r // grid_res, r % grid_res] = np.searchsorted(hits, xs) % 2 == 1
    return occupancy


def volume_iou(a: TriMesh, b: TriMesh, grid_res: int, bounds: Sequence[Sequence[float]] = UNIT_BOX) -> float:
    """|A and B| / |A or B| on a shared voxel grid; two empty solids count as identical"""
    va = voxelize(a, grid_res, bounds)
    vb = voxelize(b, grid_res, bounds)
    union = int(np.count_nonzero(va | vb))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(va & vb)) / union


def evaluate(truth: TriMesh, recon: TriMesh, cfg: MetricsConfig = MetricsConfig()) -> Tuple[float, float]:
    """(Chamfer distance, volume IoU) of a reconstruction against ground truth"""
    cd = chamfer(truth, recon, cfg.samples, cfg.seed)
    iou = volume_iou(truth, recon, cfg.grid_res)
    logger.info("📊 chamfer=%.6g volume_iou=%.4f", cd, iou)
    return cd, iou
