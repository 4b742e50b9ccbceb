import json

import numpy as np
import pytest

from complex_core import SimplicialComplex, add_chains, is_cycle
from errors import ArgumentError, ConformanceError
from mesh_io import TetComplex, make_voxel_genus_solid
from tests.conftest import TORUS
from topo_loops import (
    LoopKind,
    _single_cycle,
    detect_loops,
    euler_walk,
    fundamental_cycles,
    load_loops,
    loop_from_edges,
    null_homologous,
    run_volume_phase,
    save_loops,
    shorten_loop,
)


def test_euler_walk_of_a_square():
    assert euler_walk([(2, 3), (0, 1), (1, 2), (0, 3)]) == [0, 1, 2, 3]
    assert euler_walk([]) == []


def test_euler_walk_rejects_open_paths():
    with pytest.raises(ArgumentError):
        euler_walk([(0, 1), (1, 2)])


def test_fundamental_cycle_count(torus):
    cycles = fundamental_cycles(torus.edges, torus.n_vertices)
    assert len(cycles) == len(torus.edges) - torus.n_vertices + 1
    k = torus.complex
    offset = k.offset(1)
    for c in cycles:
        assert is_cycle(k, k.chain(offset + r for r in c.members))


def test_fundamental_cycles_of_two_triangles():
    cycles = fundamental_cycles([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    assert sorted(sorted(c.members) for c in cycles) == [[0, 1, 2], [3, 4, 5]]


def test_null_homologous_requires_a_cycle():
    k = SimplicialComplex([(0, 1, 2)])
    with pytest.raises(ArgumentError):
        null_homologous(k.chain([(0, 1)]), k)
    assert null_homologous(k.chain([(0, 1), (1, 2), (0, 2)]), k)


def test_surface_phase_leaves_two_g_generators(torus, torus_solid, plate2, sphere, sphere_solid):
    inner = run_volume_phase(torus, torus_solid)
    assert len(inner.generators) == 2
    assert len(inner.killers) == 1
    inner = run_volume_phase(plate2.surface, plate2.interior)
    assert len(inner.generators) == 4
    assert len(inner.killers) == 2
    inner = run_volume_phase(sphere, sphere_solid)
    assert inner.generators == ()


def test_exterior_kills_the_other_half(plate2):
    outer = run_volume_phase(plate2.surface, plate2.exterior)
    assert len(outer.generators) == 4
    assert len(outer.killers) == 2


@pytest.mark.slow
def test_genus_three_rank_law():
    surface, interior, exterior = make_voxel_genus_solid(3, 16)
    inner = run_volume_phase(surface, interior)
    outer = run_volume_phase(surface, exterior)
    assert len(inner.generators) == 6
    assert len(inner.killers) == 3
    assert len(outer.killers) == 3


def _check_loops(report, surface, interior, exterior=None):
    surf = surface.complex
    inner = interior.complex
    for lc in report.handles:
        assert lc.kind is LoopKind.HANDLE
        assert null_homologous(lc.chain_in(inner), inner)
        assert not null_homologous(lc.edges, surf)
    for lc in report.tunnels:
        assert lc.kind is LoopKind.TUNNEL
        assert not null_homologous(lc.chain_in(inner), inner)
        assert not null_homologous(lc.edges, surf)
        if exterior is not None:
            outer = exterior.complex
            assert null_homologous(lc.chain_in(outer), outer)


def test_torus_loops(torus, torus_solid):
    report = detect_loops(torus, torus_solid)
    assert report.genus == 1
    assert len(report.handles) == 1 and len(report.tunnels) == 1
    _check_loops(report, torus, torus_solid)


def test_plate_loops_with_exterior(plate2):
    report = detect_loops(plate2.surface, plate2.interior, plate2.exterior)
    assert report.genus == 2
    assert len(report.handles) == 2 and len(report.tunnels) == 2
    _check_loops(report, plate2.surface, plate2.interior, plate2.exterior)


def test_plate_tunnels_without_exterior(plate2):
    report = detect_loops(plate2.surface, plate2.interior)
    assert len(report.tunnels) == 2
    _check_loops(report, plate2.surface, plate2.interior)


def test_sphere_has_no_loops(sphere, sphere_solid):
    report = detect_loops(sphere, sphere_solid)
    assert report.genus == 0
    assert report.loops == []


def test_detect_loops_checks_conformance(torus):
    with pytest.raises(ConformanceError):
        detect_loops(torus, TetComplex(torus.vertices, [[0, 1, 2, 3]]))


def _ring(mesh, i):
    """Loop around the axis through the vertices of tube ring ``i``"""
    nv = TORUS[3]
    seq = [i * nv + j for j in range(nv)]
    return loop_from_edges(mesh, [(seq[t], seq[(t + 1) % nv]) for t in range(nv)], LoopKind.HANDLE)


def _walk_loop(mesh, seq, kind=LoopKind.HANDLE):
    return loop_from_edges(mesh, [(seq[t], seq[(t + 1) % len(seq)]) for t in range(len(seq))], kind)


def _same_class(a, b, mesh):
    return null_homologous(add_chains(a.edges, b.edges), mesh.complex)


def test_shorten_loop_never_lengthens(torus):
    nv = TORUS[3]
    # zig-zag between the first two rings, once around the axis
    seq = []
    for j in range(nv):
        pair = [j, nv + j]
        seq.extend(pair if j % 2 == 0 else pair[::-1])
    loop = _walk_loop(torus, seq)
    assert not null_homologous(loop.edges, torus.complex)
    shorter = shorten_loop(loop, torus)
    assert shorter.length < loop.length
    assert not null_homologous(shorter.edges, torus.complex)
    assert _same_class(shorter, loop, torus)


def test_shorten_loop_removes_a_detour(torus):
    nv = TORUS[3]
    inner = [3 * nv + j for j in range(nv)]
    # inner ring with 30 -> 31 replaced by 30 -> 39 -> 40 -> 31 through ring 4
    seq = inner[:4] + [4 * nv + 3, 4 * nv + 4] + inner[4:]
    loop = _walk_loop(torus, seq)
    assert loop.length > _ring(torus, 3).length
    shorter = shorten_loop(loop, torus)
    assert shorter.length < loop.length
    assert _same_class(shorter, loop, torus)


def test_inner_ring_is_a_fixed_point(torus):
    ring = _ring(torus, 3)
    out = shorten_loop(ring, torus)
    assert out.edges == ring.edges
    assert out.length == pytest.approx(ring.length, abs=1e-12)


def test_loop_counts_survive_a_rigid_motion(torus, torus_solid):
    a, b = 0.7, 0.4
    rz = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(b), -np.sin(b)], [0.0, np.sin(b), np.cos(b)]])
    shift = np.array([1.5, -0.25, 3.0])

    def move(v):
        return v @ (rx @ rz).T + shift

    moved = torus.with_vertices(move(torus.vertices))
    moved_solid = TetComplex(move(torus_solid.vertices), torus_solid.tets)
    before = detect_loops(torus, torus_solid)
    after = detect_loops(moved, moved_solid)
    assert after.genus == before.genus == 1
    assert (len(after.handles), len(after.tunnels)) == (len(before.handles), len(before.tunnels))


@pytest.mark.parametrize("edges, expected", [
    ([(0, 1), (1, 2), (2, 3), (0, 3)], 1),
    ([(0, 1), (1, 2), (1, 3)], 0),
    ([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], 3),
])
def test_fundamental_cycles_of_small_graphs(edges, expected):
    assert len(fundamental_cycles(edges)) == expected


def test_split_cycle_keeps_one_component_and_notes_the_rest(torus):
    ring0, ring3 = _ring(torus, 0), _ring(torus, 3)
    both = add_chains(ring0.edges, ring3.edges)
    notes = []
    kept = _single_cycle(torus, both, LoopKind.TUNNEL, None, notes)
    assert kept.edges == ring3.edges
    assert len(notes) == 1
    assert "2 components" in notes[0]
    assert f"dropped {TORUS[3]} edges" in notes[0]


def test_loop_from_edges_rejects_foreign_edges(torus):
    with pytest.raises(ArgumentError):
        loop_from_edges(torus, [(0, 40), (40, 41), (0, 41)], LoopKind.TUNNEL)


def test_loop_files(tmp_path, torus, torus_solid):
    report = detect_loops(torus, torus_solid)
    path = tmp_path / "loops.txt"
    sidecar = save_loops(report, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    for line, lc in zip(lines, report.loops):
        fields = line.split()
        assert fields[0] == lc.kind.value
        assert int(fields[1]) == lc.vertex_count
        assert len(fields) == lc.vertex_count + 3
        assert fields[2] == fields[-1]
    with open(sidecar, encoding="utf-8") as fh:
        meta = json.load(fh)
    assert meta["genus"] == 1
    assert [r["kind"] for r in meta["loops"]] == ["handle", "tunnel"]
    loaded = load_loops(path, torus)
    assert [lc.edges for lc in loaded] == [lc.edges for lc in report.loops]
