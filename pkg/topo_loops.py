"""
Handle and tunnel loops of a closed surface

The surface is filtered first (edge-length key), then the simplices of a
conforming volume are added in order of their distance to the surface. Surface
generators killed by interior triangles give handle loops; the same run on the
exterior gives tunnel loops. Without an exterior complex, tunnels are picked
among fundamental cycles of the surface graph that stay independent of the
surface boundaries and the handles. Every loop is finally shortened.
"""
import itertools
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, dijkstra
from scipy.spatial import cKDTree

from complex_core import Chain, Filtration, SimplicialComplex, Z2Basis, boundary_of_chain, build_filtration
from errors import ArgumentError, ParseError, TopologyError
from mesh_io import TetComplex, TriMesh, genus
from persistence import Pairing, Sign, mark_loop, pair
from schemas import LoopRecord, LoopSidecar

logger = logging.getLogger(__name__)


class LoopKind(str, Enum):
    HANDLE = "handle"
    TUNNEL = "tunnel"


@dataclass(frozen=True, eq=False)
class LoopCycle:
    """
    Closed edge cycle on a surface.

    ``edges`` holds edge ids of ``mesh.complex``; ``vertex_sequence`` is an
    Euler walk over them without the closing repeat of its first vertex.
    """

    edges: Chain
    kind: LoopKind
    vertex_sequence: Tuple[int, ...]
    length: float

    @property
    def vertex_count(self) -> int:
        return len(self.vertex_sequence)

    def edge_pairs(self) -> List[Tuple[int, int]]:
        seq = self.vertex_sequence
        return [tuple(sorted((seq[i], seq[(i + 1) % len(seq)]))) for i in range(len(seq))]

    def chain_in(self, complex_: SimplicialComplex) -> Chain:
        """The same cycle expressed in another complex's id space"""
        return complex_.chain(self.edge_pairs())


@dataclass
class LoopReport:
    handles: List[LoopCycle]
    tunnels: List[LoopCycle]
    genus: int
    notes: List[str] = field(default_factory=list)

    @property
    def loops(self) -> List[LoopCycle]:
        return list(self.handles) + list(self.tunnels)


def euler_walk(edge_pairs: Sequence[Tuple[int, int]]) -> List[int]:
    """
    Closed walk using every edge once (Hierholzer), starting at the smallest
    vertex and always taking the smallest unused neighbour.
    """
    if not edge_pairs:
        return []
    adjacency: Dict[int, List[int]] = defaultdict(list)
    for u, v in edge_pairs:
        adjacency[u].append(v)
        adjacency[v].append(u)
    for u, nbrs in adjacency.items():
        if len(nbrs) % 2:
            raise ArgumentError(f"vertex {u} has odd degree; edges do not form a cycle")
        nbrs.sort(reverse=True)
    unused = {tuple(sorted(e)) for e in edge_pairs}
    start = min(adjacency)
    stack = [start]
    walk = []
    while stack:
        u = stack[-1]
        nbrs = adjacency[u]
        while nbrs and tuple(sorted((u, nbrs[-1]))) not in unused:
            nbrs.pop()
        if nbrs:
            v = nbrs.pop()
            unused.discard(tuple(sorted((u, v))))
            stack.append(v)
        else:
            walk.append(stack.pop())
    walk.reverse()
    if len(walk) - 1 != len(edge_pairs):
        raise ArgumentError("edges do not form a connected cycle")
    return walk[:-1]


def loop_from_edges(mesh: TriMesh, edge_pairs: Iterable[Tuple[int, int]], kind: LoopKind) -> LoopCycle:
    pairs = sorted({tuple(sorted((int(u), int(v)))) for u, v in edge_pairs})
    try:
        chain = mesh.complex.chain(pairs)
    except KeyError:
        raise ArgumentError("loop uses an edge that is not on the surface") from None
    walk = euler_walk(pairs)
    v = mesh.vertices
    length = float(sum(np.linalg.norm(v[a] - v[b]) for a, b in pairs))
    return LoopCycle(chain, LoopKind(kind), tuple(walk), length)


def loop_from_chain(mesh: TriMesh, chain: Chain, kind: LoopKind) -> LoopCycle:
    """Chain of ``mesh.complex`` edge ids -> LoopCycle"""
    if chain.is_empty:
        raise ArgumentError("empty chain is not a loop")
    if chain.dim != 1:
        raise ArgumentError(f"loop chain must be 1-dimensional, got {chain.dim}")
    k = mesh.complex
    return loop_from_edges(mesh, (k.simplex(i) for i in chain.members), kind)


def null_homologous(c: Chain, complex_: SimplicialComplex) -> bool:
    """True iff the p-cycle c bounds a (p+1)-chain of the complex (Z/2 elimination)"""
    if c.is_empty:
        return True
    if not boundary_of_chain(complex_, c).is_empty:
        raise ArgumentError("chain is not a cycle")
    return complex_.boundary_basis(c.dim + 1).contains(complex_.mask_of(c))


def fundamental_cycles(edges, n_vertices: Optional[int] = None) -> List[Chain]:
    """
    One cycle per co-tree edge of a BFS spanning forest.

    ``edges`` is an (E, 2) array of vertex pairs; each returned Chain lists
    row indices into it. Every component is rooted at its lowest vertex and
    contributes |E_c| - |V_c| + 1 cycles, ordered by co-tree edge row.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if not len(edges):
        return []
    n = int(edges.max()) + 1 if n_vertices is None else int(n_vertices)
    graph = coo_matrix(
        (np.ones(2 * len(edges)), (np.concatenate([edges[:, 0], edges[:, 1]]), np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(n, n),
    ).tocsr()
    graph.data[:] = 1.0
    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        logger.debug("edge graph has %d components; cycles are collected per component", n_comp)

    row_of = {tuple(sorted(e)): i for i, e in enumerate(edges.tolist())}
    parent = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    tree_rows: Set[int] = set()
    for comp in range(n_comp):
        root = int(np.flatnonzero(labels == comp)[0])
        order, pred = breadth_first_order(graph, root, directed=False, return_predecessors=True)
        for v in order[1:]:
            p = int(pred[v])
            parent[v] = p
            depth[v] = depth[p] + 1
            tree_rows.add(row_of[tuple(sorted((int(v), p)))])

    def climb(u: int) -> int:
        return row_of[tuple(sorted((u, int(parent[u]))))]

    cycles = []
    for row, (a, b) in enumerate(edges.tolist()):
        if row in tree_rows:
            continue
        members = {row}
        u, v = a, b
        while u != v:
            if depth[u] >= depth[v]:
                members ^= {climb(u)}
                u = int(parent[u])
            else:
                members ^= {climb(v)}
                v = int(parent[v])
        cycles.append(Chain(frozenset(members), 1))
    return cycles


def _edge_lengths(mesh: TriMesh) -> Dict[Tuple[int, int], float]:
    return dict(zip(map(tuple, mesh.edges.tolist()), mesh.edge_lengths().tolist()))


def _cancel_backtracks(seq: List[int]) -> List[int]:
    """Drop x y x detours from a cyclic walk"""
    changed = True
    while changed and len(seq) > 2:
        changed = False
        m = len(seq)
        for j in range(m):
            if seq[(j - 1) % m] == seq[(j + 1) % m]:
                drop = {j, (j + 1) % m}
                seq = [v for i, v in enumerate(seq) if i not in drop]
                changed = True
                break
    return seq


def _walk_edges(seq: Sequence[int]) -> List[Tuple[int, int]]:
    m = len(seq)
    return [tuple(sorted((seq[i], seq[(i + 1) % m]))) for i in range(m)]


class _SurfaceIndex:
    """Vertex-to-face incidence and edge lengths used by the shortening moves"""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.lengths = _edge_lengths(mesh)
        f = mesh.faces
        incidence = coo_matrix(
            (np.ones(f.size), (np.repeat(np.arange(len(f)), 3), f.ravel())), shape=(len(f), len(mesh.vertices))
        )
        self.vertex_faces = incidence.T.tocsr()

    def region_faces(self, vertices: Iterable[int]) -> np.ndarray:
        rows = [self.vertex_faces.indices[self.vertex_faces.indptr[v]:self.vertex_faces.indptr[v + 1]] for v in vertices]
        return np.unique(np.concatenate(rows))

    def shortest_path(self, faces: np.ndarray, a: int, b: int) -> Tuple[float, List[int]]:
        tri = self.mesh.faces[faces]
        local, inverse = np.unique(tri, return_inverse=True)
        inverse = inverse.reshape(-1, 3)
        e = np.concatenate([inverse[:, [0, 1]], inverse[:, [1, 2]], inverse[:, [2, 0]]])
        e.sort(axis=1)
        e = np.unique(e, axis=0)
        w = np.array([self.lengths[(int(local[i]), int(local[j]))] for i, j in e])
        graph = coo_matrix((w, (e[:, 0], e[:, 1])), shape=(len(local), len(local))).tocsr()
        ia = int(np.searchsorted(local, a))
        ib = int(np.searchsorted(local, b))
        dist, pred = dijkstra(graph, directed=False, indices=ia, return_predecessors=True)
        if not np.isfinite(dist[ib]):
            return np.inf, []
        path = [ib]
        while path[-1] != ia:
            path.append(int(pred[path[-1]]))
        return float(dist[ib]), [int(local[i]) for i in reversed(path)]

    def bounds_locally(self, faces: np.ndarray, diff: Set[Tuple[int, int]]) -> bool:
        """Does the edge cycle ``diff`` bound a union of the given faces"""
        if not diff:
            return True
        tri = self.mesh.faces[faces]
        index: Dict[Tuple[int, int], int] = {}
        basis = Z2Basis()
        for a, b, c in tri.tolist():
            mask = 0
            for edge in ((a, b), (b, c), (a, c)):
                edge = tuple(sorted(edge))
                mask |= 1 << index.setdefault(edge, len(index))
            basis.add(mask)
        target = 0
        for edge in diff:
            if edge not in index:
                return False
            target |= 1 << index[edge]
        return basis.contains(target)


def shorten_loop(loop: LoopCycle, surface: TriMesh, max_rounds: int = 10, window: int = 3,
                 index: Optional[_SurfaceIndex] = None) -> LoopCycle:
    """
    Local curve shortening.

    Sub-arcs of 3..``window`` consecutive vertices are replaced by the
    shortest edge path between their endpoints through the triangles touching
    the arc, when that is strictly shorter, keeps the walk free of repeated
    edges and differs from the arc by a boundary of those triangles. Stops
    after a round without improvement or after ``max_rounds`` rounds.
    """
    k = surface.complex
    for sid in loop.edges.members:
        if not 0 <= sid < len(k) or k.dim_of(sid) != 1:
            raise ArgumentError(f"loop edge {sid} is not an edge of the surface")
    if window < 3:
        return loop
    index = index or _SurfaceIndex(surface)
    seq = list(loop.vertex_sequence)

    for round_no in range(max_rounds):
        improved = False
        i = 0
        while i < len(seq):
            m = len(seq)
            moved = False
            for size in range(min(window, m - 1), 2, -1):
                arc = [seq[(i + t) % m] for t in range(size)]
                a, b = arc[0], arc[-1]
                if a == b:
                    continue
                arc_edges = _walk_edges(arc)[:-1]
                old_len = sum(index.lengths[e] for e in arc_edges)
                faces = index.region_faces(arc)
                new_len, path = index.shortest_path(faces, a, b)
                if not new_len < old_len - 1e-12:
                    continue
                rotated = seq[i:] + seq[:i]
                candidate = _cancel_backtracks(path + rotated[size:])
                if len(candidate) < 3:
                    continue
                walk_edges = _walk_edges(candidate)
                if len(set(walk_edges)) != len(walk_edges):
                    continue
                diff = set(arc_edges) ^ set(_walk_edges(path)[:-1])
                if not index.bounds_locally(faces, diff):
                    continue
                seq = candidate
                moved = improved = True
                break
            if moved:
                i = 0 if i >= len(seq) else i
            else:
                i += 1
        if not improved:
            logger.debug("loop shortening converged after %d rounds", round_no)
            break

    shortened = loop_from_edges(surface, _walk_edges(seq), loop.kind)
    return shortened if shortened.length <= loop.length else loop


@dataclass(frozen=True, eq=False)
class VolumePhase:
    """Surface-then-volume filtration and its pairing"""

    complex: SimplicialComplex
    filtration: Filtration
    pairing: Pairing
    surface_ids: frozenset
    generators: Tuple[int, ...]     # surface edges alive after the surface prefix
    killers: Dict[int, int]         # generator -> volume triangle that kills it

    def surface_edge_pairs(self, chain: Chain) -> List[Tuple[int, int]]:
        return [self.complex.simplex(i) for i in chain.members]


def _distance_to_surface(surface: TriMesh) -> cKDTree:
    v = surface.vertices
    samples = [v[surface.referenced_vertices], v[surface.faces].mean(axis=1), v[surface.edges].mean(axis=1)]
    return cKDTree(np.concatenate(samples))


def run_volume_phase(surface: TriMesh, volume: TetComplex) -> VolumePhase:
    """
    Pair the surface followed by the volume.

    Surface keys: vertices 0, edges their length, triangles their longest
    edge. Volume-only simplices come after every surface simplex, ordered by
    the distance of their barycentre to the surface.
    """
    k = SimplicialComplex(itertools.chain((tuple(t) for t in surface.faces.tolist()),
                                          (tuple(t) for t in volume.tets.tolist())))
    positions = volume.vertices
    surf_k = surface.complex
    used = set(surface.referenced_vertices.tolist())
    surface_ids = frozenset(k.id_of(s) for s in surf_k if len(s) > 1 or s[0] in used)

    key = np.zeros(len(k))
    for p in (1, 2):
        ids = np.asarray(k.ids_of_dim(p))
        verts = k.simplex_array(p)
        corners = positions[verts]
        longest = np.zeros(len(ids))
        for a, b in itertools.combinations(range(p + 1), 2):
            longest = np.maximum(longest, np.linalg.norm(corners[:, a] - corners[:, b], axis=1))
        key[ids] = longest
    surface_mask = np.zeros(len(k), dtype=bool)
    surface_mask[list(surface_ids)] = True
    offset = float(key[surface_mask].max()) + 1.0
    tree = _distance_to_surface(surface)
    for p in range(4):
        ids = np.asarray(k.ids_of_dim(p))
        if not len(ids):
            continue
        inside = ~surface_mask[ids]
        if not inside.any():
            continue
        bary = positions[k.simplex_array(p)[inside]].mean(axis=1)
        dist, _ = tree.query(bary)
        key[ids[inside]] = offset + dist

    f = build_filtration(k, key)
    pairing = pair(f)
    generators = []
    killers = {}
    for sid in sorted(surface_ids, key=lambda s: int(f.position[s])):
        if k.dim_of(sid) != 1 or pairing.sign[sid] is not Sign.POSITIVE:
            continue
        killer = pairing.killer_of(sid)
        if killer is not None and killer in surface_ids:
            continue
        generators.append(sid)
        if killer is not None:
            killers[sid] = killer
    return VolumePhase(k, f, pairing, surface_ids, tuple(generators), killers)


def _components(mesh: TriMesh, chain: Chain) -> List[Chain]:
    k = mesh.complex
    edges = np.array([k.simplex(i) for i in sorted(chain.members)], dtype=np.int64)
    ids = np.array(sorted(chain.members))
    n = len(mesh.vertices)
    graph = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    comp = labels[edges[:, 0]]
    return [Chain(frozenset(ids[comp == c].tolist()), 1) for c in np.unique(comp)]


def _single_cycle(mesh: TriMesh, chain: Chain, kind: LoopKind, volume_complex: Optional[SimplicialComplex],
                  notes: Optional[List[str]] = None) -> LoopCycle:
    """One component of ``chain``; a dropped remainder is logged and appended to ``notes``"""
    parts = _components(mesh, chain)
    if len(parts) == 1:
        return loop_from_chain(mesh, chain, kind)
    loops = sorted((loop_from_chain(mesh, part, kind) for part in parts), key=lambda lc: lc.length)
    surface_nonnull = [lc for lc in loops if not null_homologous(lc.edges, mesh.complex)]
    preferred = [lc for lc in surface_nonnull
                 if volume_complex is None or null_homologous(lc.chain_in(volume_complex), volume_complex)]
    chosen = (preferred or surface_nonnull or loops)[0]
    message = (f"{kind.value} cycle had {len(parts)} components; kept one of length {chosen.length:.4g}, "
               f"dropped {len(chain.members) - len(chosen.edges.members)} edges")
    logger.warning("⚠️  %s", message)
    if notes is not None:
        notes.append(message)
    return chosen


def _loops_from_phase(surface: TriMesh, phase: VolumePhase, kind: LoopKind, notes: List[str]) -> List[LoopCycle]:
    loops = []
    killers = sorted(phase.killers.values(), key=lambda d: int(phase.filtration.position[d]))
    for d in killers:
        chain = mark_loop(phase.pairing, d, phase.filtration, boundary=phase.surface_ids)
        surface_chain = surface.complex.chain(phase.surface_edge_pairs(chain))
        loops.append(_single_cycle(surface, surface_chain, kind, phase.complex, notes))
    return loops


def _tunnels_from_cycles(surface: TriMesh, handles: List[LoopCycle], g: int, notes: List[str]) -> List[LoopCycle]:
    """
    Greedy pick of the g shortest fundamental cycles that are independent of
    the surface boundaries and of the handle loops.
    """
    k = surface.complex
    basis = k.boundary_basis(2).copy()
    for h in handles:
        basis.add(k.mask_of(h.edges))
    lengths = surface.edge_lengths()
    offset = k.offset(1)
    candidates = fundamental_cycles(surface.edges, len(surface.vertices))
    scored = sorted(
        ((float(lengths[sorted(c.members)].sum()), sorted(c.members), c) for c in candidates),
        key=lambda item: (item[0], item[1]),
    )
    tunnels = []
    for _, _, cycle in scored:
        chain = Chain(frozenset(offset + r for r in cycle.members), 1)
        if basis.add(k.mask_of(chain)):
            tunnels.append(_single_cycle(surface, chain, LoopKind.TUNNEL, None, notes))
            if len(tunnels) == g:
                break
    return tunnels


def _shared_edge_notes(surface: TriMesh, report: LoopReport) -> List[str]:
    owners: Dict[int, List[str]] = defaultdict(list)
    for kind, loops in (("handle", report.handles), ("tunnel", report.tunnels)):
        for i, lc in enumerate(loops):
            for sid in lc.edges.members:
                owners[sid].append(f"{kind}#{i}")
    notes = []
    for sid in sorted(owners):
        if len(owners[sid]) > 1:
            notes.append(f"edge {surface.complex.simplex(sid)} shared by {', '.join(owners[sid])}")
    return notes


def detect_loops(surface: TriMesh, interior: TetComplex, exterior: Optional[TetComplex] = None,
                 shorten_rounds: int = 10, window: int = 3) -> LoopReport:
    """Handle loops from the interior, tunnel loops from the exterior or from the surface graph"""
    surface.check_closed_manifold()
    g = genus(surface)
    interior.check_conformance(surface)
    if exterior is not None:
        exterior.check_conformance(surface)
    if g == 0:
        logger.info("✅ genus 0 surface: no handle or tunnel loops")
        return LoopReport([], [], 0)

    inner = run_volume_phase(surface, interior)
    if len(inner.generators) != 2 * g:
        raise TopologyError(f"surface has {len(inner.generators)} generators, expected {2 * g}")
    if len(inner.killers) != g:
        logger.warning("⚠️  interior killed %d surface generators, expected %d", len(inner.killers), g)
    notes: List[str] = []
    handles = _loops_from_phase(surface, inner, LoopKind.HANDLE, notes)

    if exterior is not None:
        outer = run_volume_phase(surface, exterior)
        if len(outer.killers) != g:
            logger.warning("⚠️  exterior killed %d surface generators, expected %d", len(outer.killers), g)
        tunnels = _loops_from_phase(surface, outer, LoopKind.TUNNEL, notes)
    else:
        tunnels = _tunnels_from_cycles(surface, handles, g, notes)

    index = _SurfaceIndex(surface)
    handles = [shorten_loop(lc, surface, shorten_rounds, window, index) for lc in handles]
    tunnels = [shorten_loop(lc, surface, shorten_rounds, window, index) for lc in tunnels]
    report = LoopReport(handles, tunnels, g)
    report.notes = notes + _shared_edge_notes(surface, report)
    logger.info("✅ genus %d: %d handle and %d tunnel loops", g, len(handles), len(tunnels))
    return report


def save_loops(report: LoopReport, path) -> str:
    """
    Write the line-set file (``kind m v0 ... v_{m-1} v0`` per loop) and a JSON
    sidecar next to it; returns the sidecar path.
    """
    path = str(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for lc in report.loops:
            seq = list(lc.vertex_sequence)
            fh.write(" ".join([lc.kind.value, str(len(seq))] + [str(v) for v in seq + seq[:1]]) + "\n")
    sidecar = LoopSidecar(
        genus=report.genus,
        loops=[LoopRecord(kind=lc.kind.value, vertex_count=lc.vertex_count, length=lc.length) for lc in report.loops],
        notes=report.notes,
    )
    sidecar_path = os.path.splitext(path)[0] + ".json"
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        fh.write(sidecar.model_dump_json(indent=2))
    return sidecar_path


def load_loops(path, mesh: TriMesh) -> List[LoopCycle]:
    """Read a line-set file back into loops on ``mesh``"""
    loops = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            try:
                kind = LoopKind(fields[0])
                count = int(fields[1])
                seq = [int(x) for x in fields[2:]]
            except (ValueError, IndexError):
                raise ParseError("malformed loop record", str(path), lineno) from None
            if len(seq) != count + 1 or seq[0] != seq[-1]:
                raise ParseError("loop record does not close", str(path), lineno)
            loops.append(loop_from_edges(mesh, _walk_edges(seq[:-1]), kind))
    return loops
