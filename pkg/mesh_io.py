"""
Triangle meshes, tetrahedral complexes and synthetic fixtures

Holds the optimisation variable (TriMesh), the conforming volumetric complexes
used by loop detection (TetComplex), the fixture generators and the OBJ /
TetGen readers and writers.
"""
import itertools
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from complex_core import SimplicialComplex
from errors import ArgumentError, ConformanceError, InconsistencyError, ParseError, TopologyError

logger = logging.getLogger(__name__)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Triangle mesh: float64 (n, 3) vertices and int64 (m, 3) faces.

    Faces keep their winding; for closed fixtures it is outward (CCW seen
    from outside).
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ArgumentError(f"face index out of range for {len(v)} vertices")
        if f.size and ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
            raise ArgumentError("faces must reference three distinct vertices")
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "faces", _freeze(f))

    def __repr__(self) -> str:
        return f"<TriMesh(V={len(self.vertices)}, F={len(self.faces)})>"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity, new positions"""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        if vertices.shape != self.vertices.shape:
            raise ArgumentError("vertex array shape does not match the mesh")
        return TriMesh(vertices, self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (u < v), sorted lexicographically"""
        if not len(self.faces):
            return np.zeros((0, 2), dtype=np.int64)
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return _freeze(np.unique(e, axis=0))

    @cached_property
    def edge_face_counts(self) -> np.ndarray:
        """How many faces use each row of ``edges``"""
        if not len(self.faces):
            return np.zeros(0, dtype=np.int64)
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    @cached_property
    def complex(self) -> SimplicialComplex:
        """Surface simplicial complex; vertex i has simplex id i"""
        return SimplicialComplex(
            itertools.chain(((i,) for i in range(len(self.vertices))), (tuple(t) for t in self.faces.tolist()))
        )

    @property
    def is_edge_manifold(self) -> bool:
        return bool(len(self.faces)) and bool((self.edge_face_counts <= 2).all())

    @property
    def is_closed(self) -> bool:
        return bool(len(self.faces)) and bool((self.edge_face_counts == 2).all())

    @property
    def is_oriented(self) -> bool:
        """Every edge is used once in each direction"""
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return len(np.unique(directed, axis=0)) == len(directed)

    @cached_property
    def referenced_vertices(self) -> np.ndarray:
        return np.unique(self.faces)

    def vertex_adjacency(self):
        """Symmetric 0/1 csr adjacency over all vertices"""
        n = len(self.vertices)
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()

    @property
    def is_connected(self) -> bool:
        used = self.referenced_vertices
        if not len(used):
            return False
        _, labels = connected_components(self.vertex_adjacency(), directed=False)
        return len(np.unique(labels[used])) == 1

    def check_closed_manifold(self) -> None:
        if not len(self.faces):
            raise TopologyError("mesh has no faces")
        if not self.is_edge_manifold:
            raise TopologyError("mesh is not edge-manifold")
        if not self.is_closed:
            raise TopologyError("mesh is not closed (boundary edges present)")

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unnormalised (2 * area) face normals"""
        v = self.vertices[self.faces]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals, axis=1)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        used = self.vertices[self.referenced_vertices] if len(self.faces) else self.vertices
        return used.min(axis=0), used.max(axis=0)

    def bounding_sphere(self) -> Tuple[np.ndarray, float]:
        """Vertex centroid and max vertex distance to it"""
        used = self.vertices[self.referenced_vertices]
        center = used.mean(axis=0)
        return center, float(np.linalg.norm(used - center, axis=1).max())


def genus(mesh: TriMesh) -> int:
    """g = (2 - V + E - F) / 2 for a closed, edge-manifold, connected mesh"""
    mesh.check_closed_manifold()
    if not mesh.is_connected:
        raise TopologyError("mesh is not connected")
    v = len(mesh.referenced_vertices)
    e = len(mesh.edges)
    f = len(mesh.faces)
    twice = 2 - v + e - f
    if twice % 2 or twice < 0:
        raise InconsistencyError(f"Euler characteristic {v - e + f} gives no valid genus")
    return twice // 2


@dataclass(frozen=True, eq=False)
class TetComplex:
    """Tetrahedra over a vertex array that starts with the surface vertices it conforms to"""

    vertices: np.ndarray
    tets: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.tets, dtype=np.int64).reshape(-1, 4)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ArgumentError(f"tet index out of range for {len(v)} vertices")
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "tets", _freeze(t))

    def __repr__(self) -> str:
        return f"<TetComplex(V={len(self.vertices)}, T={len(self.tets)})>"

    @cached_property
    def complex(self) -> SimplicialComplex:
        return SimplicialComplex(tuple(t) for t in self.tets.tolist())

    def missing_surface_simplices(self, surface: TriMesh) -> List[Tuple[int, ...]]:
        """Surface simplices (vertices, edges, triangles) absent from this complex"""
        k = self.complex
        used = set(surface.referenced_vertices.tolist())
        return [s for s in surface.complex if (len(s) > 1 or s[0] in used) and s not in k]

    def check_conformance(self, surface: TriMesh, atol: float = 1e-9) -> None:
        n = len(surface.vertices)
        if len(self.vertices) < n or not np.allclose(self.vertices[:n], surface.vertices, atol=atol):
            raise ConformanceError("volumetric complex does not start with the surface vertices")
        missing = self.missing_surface_simplices(surface)
        if missing:
            raise ConformanceError(f"{len(missing)} surface simplices are not in the volumetric complex, e.g. {missing[0]}")

    def conforms_to(self, surface: TriMesh) -> bool:
        try:
            self.check_conformance(surface)
        except ConformanceError:
            return False
        return True

    def conformed_to(self, surface: TriMesh, tol: float = 1e-9) -> "TetComplex":
        """
        Re-index onto a surface by matching coordinates.

        Vertices found on the surface take its ids; the rest follow in their
        original order.
        """
        tree = cKDTree(surface.vertices)
        dist, nearest = tree.query(self.vertices)
        on_surface = dist <= tol
        n = len(surface.vertices)
        new_id = np.empty(len(self.vertices), dtype=np.int64)
        new_id[on_surface] = nearest[on_surface]
        extra = np.flatnonzero(~on_surface)
        new_id[extra] = n + np.arange(len(extra))
        vertices = np.vstack([surface.vertices, self.vertices[extra]])
        logger.debug("conformed %d of %d tet vertices onto the surface", int(on_surface.sum()), len(self.vertices))
        return TetComplex(vertices, new_id[self.tets])


@dataclass(frozen=True, eq=False)
class VoxelSolid:
    """Occupancy grid; cell (i, j, k) spans origin + cell_size * [i, i+1] x ..."""

    occupancy: np.ndarray
    cell_size: float = 1.0
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or not occ.any():
            raise ArgumentError("occupancy must be a non-empty 3D grid")
        if self.cell_size <= 0:
            raise ArgumentError("cell_size must be positive")
        _, n_parts = ndimage.label(occ)
        if n_parts != 1:
            raise TopologyError(f"occupied region has {n_parts} face-connected parts")
        object.__setattr__(self, "occupancy", _freeze(occ.copy()))


def make_torus(R: float, r: float, nu: int, nv: int) -> TriMesh:
    """
    Parametric torus. u is the tube angle, v the angle around the axis (z):

        x = (R + r cos u) cos v,  y = (R + r cos u) sin v,  z = r sin u

    Vertex (i, j) at u_i = 2 pi i / nu, v_j = 2 pi j / nv has id i * nv + j.
    Each quad is split along the diagonal through its lowest vertex id, the
    rule ``torus_interior`` relies on.
    """
    if not (R > r > 0):
        raise ArgumentError(f"torus needs R > r > 0, got R={R}, r={r}")
    if nu < 3 or nv < 3:
        raise ArgumentError("torus needs nu, nv >= 3")
    u = 2 * np.pi * np.arange(nu) / nu
    v = 2 * np.pi * np.arange(nv) / nv
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = R + r * np.cos(uu)
    vertices = np.stack([ring * np.cos(vv), ring * np.sin(vv), r * np.sin(uu)], axis=-1).reshape(-1, 3)

    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = i * nv + (j + 1) % nv
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = ((i + 1) % nu) * nv + j
            faces.extend(_split_quad(a, b, c, d))
    return TriMesh(vertices, np.array(faces, dtype=np.int64))


def _split_quad(a: int, b: int, c: int, d: int) -> List[Tuple[int, int, int]]:
    """CCW quad a-b-c-d split along the diagonal through its lowest id"""
    if min(a, b, c, d) in (a, c):
        return [(a, b, c), (a, c, d)]
    return [(a, b, d), (b, c, d)]


# rotations of a prism (bottom V1 V2 V3, top V4 V5 V6) that bring vertex k to V1
_PRISM_ROTATION = np.array([
    [0, 1, 2, 3, 4, 5],
    [1, 2, 0, 4, 5, 3],
    [2, 0, 1, 5, 3, 4],
    [3, 5, 4, 0, 2, 1],
    [4, 3, 5, 1, 0, 2],
    [5, 4, 3, 2, 1, 0],
])


def split_prism(prism: Sequence[int]) -> List[Tuple[int, int, int, int]]:
    """
    Split a triangular prism into 3 tets so every quad face is cut along the
    diagonal through its lowest vertex id; neighbouring prisms therefore agree.
    """
    p = np.asarray(prism)
    v1, v2, v3, v4, v5, v6 = p[_PRISM_ROTATION[int(np.argmin(p))]].tolist()
    if min(v2, v6) < min(v3, v5):
        return [(v1, v2, v3, v6), (v1, v2, v6, v5), (v1, v5, v6, v4)]
    return [(v1, v2, v3, v5), (v1, v5, v3, v6), (v1, v5, v6, v4)]


def torus_interior(R: float, r: float, nu: int, nv: int) -> TetComplex:
    """
    Solid torus conforming to ``make_torus(R, r, nu, nv)``.

    Core circle points c_j (ids nu*nv + j) fan each tube cross-section into
    wedges; consecutive wedges form prisms split by ``split_prism``.
    """
    surface = make_torus(R, r, nu, nv)
    n = nu * nv
    v = 2 * np.pi * np.arange(nv) / nv
    core = np.stack([R * np.cos(v), R * np.sin(v), np.zeros(nv)], axis=-1)
    tets = []
    for i in range(nu):
        for j in range(nv):
            jn = (j + 1) % nv
            s_ij = i * nv + j
            s_i1j = ((i + 1) % nu) * nv + j
            s_ijn = i * nv + jn
            s_i1jn = ((i + 1) % nu) * nv + jn
            tets.extend(split_prism((n + j, s_ij, s_i1j, n + jn, s_ijn, s_i1jn)))
    return TetComplex(np.vstack([surface.vertices, core]), np.array(tets, dtype=np.int64))


_ICOSAHEDRON_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def make_icosphere(subdivisions: int = 1, radius: float = 1.0) -> TriMesh:
    """Unit icosahedron refined by midpoint subdivision and projected to the sphere"""
    if subdivisions < 0 or radius <= 0:
        raise ArgumentError("subdivisions must be >= 0 and radius > 0")
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    faces = list(_ICOSAHEDRON_FACES)
    for _ in range(subdivisions):
        midpoint: Dict[Tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = refined
    vertices = np.array(verts) * radius
    faces = np.array(faces, dtype=np.int64)
    # outward winding about the origin
    v = vertices[faces]
    inward = np.einsum("ij,ij->i", np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), v.mean(axis=1)) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return TriMesh(vertices, faces)


def cone_interior(mesh: TriMesh, apex: Optional[np.ndarray] = None) -> TetComplex:
    """Cone over a star-shaped closed surface from ``apex`` (vertex centroid by default)"""
    apex = mesh.vertices.mean(axis=0) if apex is None else np.asarray(apex, dtype=np.float64)
    n = len(mesh.vertices)
    tets = np.column_stack([np.full(len(mesh.faces), n), mesh.faces])
    return TetComplex(np.vstack([mesh.vertices, apex]), tets)


# Kuhn split: one tet per axis permutation, walking from the min corner to the max corner
_KUHN_PATHS = np.array([
    np.cumsum(np.vstack([np.zeros(3, dtype=np.int64), np.eye(3, dtype=np.int64)[list(p)]]), axis=0)
    for p in itertools.permutations(range(3))
])


@dataclass(frozen=True, eq=False)
class VoxelFixture:
    surface: TriMesh
    interior: TetComplex
    exterior: TetComplex
    solid: VoxelSolid = field(repr=False)

    def __iter__(self):
        return iter((self.surface, self.interior, self.exterior))


def tetrahedralize_voxels(solid: VoxelSolid, padding: int = 2) -> VoxelFixture:
    """
    Boundary surface plus conforming interior/exterior tet complexes of a voxel solid.

    Every cube of the padded box is Kuhn-split along its min->max diagonal, and
    every boundary square along its min->max diagonal, so the three share
    simplices. Surface vertices take ids 0..m-1 in grid order; the remaining
    grid points follow, all in one vertex array.
    """
    if padding < 1:
        raise ArgumentError("padding must be at least one cell")
    occ = np.pad(solid.occupancy, padding, constant_values=False)
    shape = np.array(occ.shape)
    point_shape = tuple(shape + 1)

    tris = []
    for axis in range(3):
        b, c = [a for a in range(3) if a != axis]
        e_b = np.eye(3, dtype=np.int64)[b]
        e_c = np.eye(3, dtype=np.int64)[c]
        step = np.eye(3, dtype=np.int64)[axis]
        # cell and its +axis neighbour differ: the square sits on the shared plane
        lo = np.take(occ, range(occ.shape[axis] - 1), axis=axis)
        hi = np.take(occ, range(1, occ.shape[axis]), axis=axis)
        natural = 1 if axis != 1 else -1
        for cells, outward in ((np.argwhere(lo & ~hi), 1), (np.argwhere(~lo & hi), -1)):
            if not len(cells):
                continue
            base = cells + step
            p00 = base
            p10 = base + e_b
            p11 = base + e_b + e_c
            p01 = base + e_c
            quads = [np.ravel_multi_index(p.T, point_shape) for p in (p00, p10, p11, p01)]
            if outward == natural:
                tris.append(np.column_stack([quads[0], quads[1], quads[2]]))
                tris.append(np.column_stack([quads[0], quads[2], quads[3]]))
            else:
                tris.append(np.column_stack([quads[0], quads[2], quads[1]]))
                tris.append(np.column_stack([quads[0], quads[3], quads[2]]))
    tris = np.concatenate(tris)

    def kuhn(cells: np.ndarray) -> np.ndarray:
        corners = cells[:, None, None, :] + _KUHN_PATHS[None, :, :, :]
        flat = np.ravel_multi_index(corners.reshape(-1, 3).T, point_shape)
        return flat.reshape(-1, 4)

    interior_tets = kuhn(np.argwhere(occ))
    exterior_tets = kuhn(np.argwhere(~occ))

    n_points = int(np.prod(point_shape))
    on_surface = np.zeros(n_points, dtype=bool)
    on_surface[tris.ravel()] = True
    surface_points = np.flatnonzero(on_surface)
    other_points = np.flatnonzero(~on_surface)
    new_id = np.empty(n_points, dtype=np.int64)
    new_id[surface_points] = np.arange(len(surface_points))
    new_id[other_points] = len(surface_points) + np.arange(len(other_points))

    grid = np.stack(np.unravel_index(np.concatenate([surface_points, other_points]), point_shape), axis=-1)
    coords = np.asarray(solid.origin, dtype=np.float64) + (grid - padding) * solid.cell_size

    surface = TriMesh(coords[:len(surface_points)], new_id[tris])
    interior = TetComplex(coords, new_id[interior_tets])
    exterior = TetComplex(coords, new_id[exterior_tets])
    logger.debug("voxel fixture: %d surface faces, %d interior tets, %d exterior tets",
                 len(surface.faces), len(interior.tets), len(exterior.tets))
    return VoxelFixture(surface, interior, exterior, solid)


def genus_plate(hole_count: int, resolution: int) -> VoxelSolid:
    """Plate resolution x 6 x 2 cells with ``hole_count`` evenly spaced 2x2 through-holes"""
    if hole_count < 0:
        raise ArgumentError("hole_count must be nonnegative")
    if resolution < 4 * hole_count + 4:
        raise ArgumentError(f"resolution {resolution} cannot separate {hole_count} holes (need >= {4 * hole_count + 4})")
    occ = np.ones((resolution, 6, 2), dtype=bool)
    for i in range(hole_count):
        start = int(round((i + 1) * resolution / (hole_count + 1))) - 1
        occ[start:start + 2, 2:4, :] = False
    return VoxelSolid(occ, cell_size=1.0 / resolution)


def make_voxel_genus_solid(hole_count: int, resolution: int) -> VoxelFixture:
    """Genus-``hole_count`` plate with conforming interior and exterior complexes"""
    return tetrahedralize_voxels(genus_plate(hole_count, resolution))


def load_obj(path) -> TriMesh:
    """Wavefront OBJ, ``v`` and ``f`` records only; polygons are fan-triangulated"""
    path = str(path)
    vertices: List[Tuple[float, float, float]] = []
    faces: List[Tuple[int, int, int]] = []
    face_lines: List[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *fields = line.split()
            if tag == "v":
                if len(fields) < 3:
                    raise ParseError("vertex record needs 3 coordinates", path, lineno)
                try:
                    vertices.append((float(fields[0]), float(fields[1]), float(fields[2])))
                except ValueError:
                    raise ParseError(f"bad vertex coordinate in {line!r}", path, lineno) from None
            elif tag == "f":
                if len(fields) < 3:
                    raise ParseError("face record needs at least 3 vertices", path, lineno)
                try:
                    idx = [int(tok.split("/")[0]) for tok in fields]
                except ValueError:
                    raise ParseError(f"bad face index in {line!r}", path, lineno) from None
                resolved = []
                for k in idx:
                    if k == 0:
                        raise ParseError("OBJ indices are 1-based; got 0", path, lineno)
                    resolved.append(k - 1 if k > 0 else len(vertices) + k)
                for a, b in zip(resolved[1:-1], resolved[2:]):
                    faces.append((resolved[0], a, b))
                    face_lines.append(lineno)
    for (a, b, c), lineno in zip(faces, face_lines):
        if min(a, b, c) < 0 or max(a, b, c) >= len(vertices):
            raise ParseError(f"face index out of range ({len(vertices)} vertices)", path, lineno)
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: TriMesh, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


def _tetgen_records(path: str) -> List[Tuple[int, List[str]]]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                records.append((lineno, line.split()))
    if not records:
        raise ParseError("empty file", path)
    return records


def load_tetgen(node_path, ele_path) -> TetComplex:
    """
    TetGen ``.node`` / ``.ele`` pair.

    The first point number in the ``.node`` file declares the base (0 or 1);
    indices are normalised to 0-based rows.
    """
    node_path, ele_path = str(node_path), str(ele_path)
    records = _tetgen_records(node_path)
    header_line, header = records[0]
    try:
        n_points, dim, n_attr, n_marker = (int(x) for x in (header + ["0", "0", "0"])[:4])
    except ValueError:
        raise ParseError("bad .node header", node_path, header_line) from None
    if dim != 3:
        raise ParseError(f"only 3D nodes are supported, header says {dim}", node_path, header_line)
    body = records[1:]
    if len(body) < n_points:
        raise ParseError(f"header declares {n_points} points, found {len(body)}", node_path,
                         body[-1][0] if body else header_line)
    width = 4 + n_attr + n_marker
    ids: Dict[int, int] = {}
    coords = np.empty((n_points, 3))
    for row, (lineno, fields) in enumerate(body[:n_points]):
        if len(fields) < 4:
            raise ParseError(f"point record has {len(fields)} fields, expected {width}", node_path, lineno)
        try:
            ids[int(fields[0])] = row
            coords[row] = [float(x) for x in fields[1:4]]
        except ValueError:
            raise ParseError("bad point record", node_path, lineno) from None
    base = int(body[0][1][0]) if body else 0
    if base not in (0, 1):
        raise ParseError(f"point numbering must start at 0 or 1, got {base}", node_path, body[0][0])

    records = _tetgen_records(ele_path)
    header_line, header = records[0]
    try:
        n_tets, per_tet = (int(x) for x in (header + ["4"])[:2])
    except ValueError:
        raise ParseError("bad .ele header", ele_path, header_line) from None
    if per_tet != 4:
        raise ParseError(f"only linear tetrahedra are supported, header says {per_tet} nodes", ele_path, header_line)
    body = records[1:]
    if len(body) < n_tets:
        raise ParseError(f"header declares {n_tets} tetrahedra, found {len(body)}", ele_path,
                         body[-1][0] if body else header_line)
    tets = np.empty((n_tets, 4), dtype=np.int64)
    for row, (lineno, fields) in enumerate(body[:n_tets]):
        if len(fields) < 5:
            raise ParseError(f"tetrahedron record has {len(fields)} fields, expected 5", ele_path, lineno)
        try:
            numbers = [int(x) for x in fields[1:5]]
        except ValueError:
            raise ParseError("bad tetrahedron record", ele_path, lineno) from None
        for k in numbers:
            if k not in ids:
                raise ParseError(f"node index {k} out of range", ele_path, lineno)
        tets[row] = [ids[k] for k in numbers]
    logger.debug("loaded %d nodes (%d-based) and %d tets", n_points, base, n_tets)
    return TetComplex(coords, tets)


def save_tetgen(tets: TetComplex, node_path, ele_path, base: int = 0) -> None:
    with open(node_path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(tets.vertices)} 3 0 0\n")
        for i, (x, y, z) in enumerate(tets.vertices):
            fh.write(f"{i + base} {x:.17g} {y:.17g} {z:.17g}\n")
    with open(ele_path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(tets.tets)} 4 0\n")
        for i, t in enumerate(tets.tets + base):
            fh.write(f"{i + base} {t[0]} {t[1]} {t[2]} {t[3]}\n")


@dataclass(frozen=True)
class UnitBoxTransform:
    """p -> (p - center) * scale + 0.5"""

    scale: float
    center: Tuple[float, float, float]

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) * self.scale + 0.5

    def inverse(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - 0.5) / self.scale + np.asarray(self.center)


def normalize_unit_box(mesh: TriMesh) -> Tuple[TriMesh, UnitBoxTransform]:
    """Uniform scale + translation putting the bounding box centred inside [0, 1]^3"""
    lo, hi = mesh.bounding_box()
    extent = float((hi - lo).max())
    if not extent > 0:
        raise ArgumentError("mesh has zero extent")
    transform = UnitBoxTransform(1.0 / extent, tuple(float(c) for c in (lo + hi) / 2))
    return mesh.with_vertices(transform.apply(mesh.vertices)), transform


def sample_surface(mesh: TriMesh, n: int, seed: int) -> np.ndarray:
    """Area-weighted face choice, then uniform barycentric sampling"""
    if n < 1:
        raise ArgumentError("sample count must be positive")
    areas = mesh.face_areas if len(mesh.faces) else np.zeros(0)
    total = float(areas.sum())
    if not len(areas) or not total > 0:
        raise ArgumentError("cannot sample a mesh with no area")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random((2, n))
    s = np.sqrt(r1)
    tri = mesh.vertices[mesh.faces[idx]]
    return ((1 - s)[:, None] * tri[:, 0] + (s * (1 - r2))[:, None] * tri[:, 1] + (s * r2)[:, None] * tri[:, 2])


def ray_hits(mesh: TriMesh, origin, direction, eps: float = 1e-12) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Möller-Trumbore against every face.

    Returns (t, u, v) for hits with t > eps, sorted by t. Hits with a
    barycentric coordinate within ``eps`` of 0 are included.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    tri = mesh.vertices[mesh.faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    p = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-15
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = origin - tri[:, 0]
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = (q @ direction) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > eps)
    order = np.argsort(t[hit], kind="stable")
    return t[hit][order], u[hit][order], v[hit][order]


def ray_intersections(mesh: TriMesh, origin, direction) -> np.ndarray:
    """Parameters t > 0 where origin + t * direction crosses a face"""
    return ray_hits(mesh, origin, direction)[0]


_PARITY_DIRECTION = np.array([0.5773502691896258, 0.6123724356957945, 0.5400617248673217])


def point_inside(mesh: TriMesh, point, direction=None) -> bool:
    """Crossing parity along a fixed oblique ray"""
    d = _PARITY_DIRECTION if direction is None else np.asarray(direction, dtype=np.float64)
    return len(ray_intersections(mesh, point, d)) % 2 == 1
