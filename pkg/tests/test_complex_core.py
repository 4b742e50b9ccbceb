import numpy as np
import pytest

from complex_core import (
    Chain,
    Filtration,
    SimplicialComplex,
    Z2Basis,
    betti_oracle,
    boundary,
    boundary_of_chain,
    build_filtration,
    is_cycle,
    make_simplex,
)
from errors import ArgumentError, DimensionMismatchError, FiltrationError, SimplexLookupError


def test_closure_assigns_ids_by_dimension_then_vertices():
    k = SimplicialComplex([(2, 0, 1)])
    assert len(k) == 7
    assert [k.count(p) for p in range(3)] == [3, 3, 1]
    assert list(k) == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)]
    assert k.id_of((1, 0)) == 3
    assert k.dimension == 2


def test_unknown_simplex_raises_lookup_error():
    k = SimplicialComplex([(0, 1)])
    with pytest.raises(SimplexLookupError):
        k.id_of((0, 2))
    with pytest.raises(KeyError):
        k.simplex(99)


def test_make_simplex_rejects_repeats_and_large_simplices():
    assert make_simplex([3, 1]) == (1, 3)
    with pytest.raises(ArgumentError):
        make_simplex([1, 1])
    with pytest.raises(ArgumentError):
        make_simplex(range(5))


def test_chain_repeats_cancel():
    k = SimplicialComplex([(0, 1, 2)])
    c = k.chain([(0, 1), (1, 2), (0, 1)])
    assert c.members == {k.id_of((1, 2))}
    assert c.dim == 1


def test_chain_mixing_dimensions_raises():
    k = SimplicialComplex([(0, 1, 2)])
    with pytest.raises(DimensionMismatchError):
        k.chain([(0,), (0, 1)])
    with pytest.raises(DimensionMismatchError):
        k.chain([(0, 1)]) + k.chain([(0, 1, 2)])


def test_empty_chain_adds_as_identity():
    k = SimplicialComplex([(0, 1, 2)])
    c = k.chain([(0, 1), (1, 2)])
    assert (c + Chain()) == c
    assert (c + c).is_empty


def test_boundary_of_boundary_is_empty():
    k = SimplicialComplex([(0, 1, 2, 3)])
    tet = k.id_of((0, 1, 2, 3))
    b = boundary(k, tet)
    assert len(b) == 4 and b.dim == 2
    assert boundary_of_chain(k, b).is_empty
    assert boundary(k, (0,)).is_empty


def test_is_cycle():
    k = SimplicialComplex([(0, 1), (1, 2), (0, 2), (2, 3)])
    assert is_cycle(k, k.chain([(0, 1), (1, 2), (0, 2)]))
    assert not is_cycle(k, k.chain([(0, 1), (1, 2)]))


def test_z2_basis():
    basis = Z2Basis()
    assert basis.add(0b011)
    assert basis.add(0b110)
    assert not basis.add(0b101)
    assert basis.contains(0b101)
    assert not basis.contains(0b001)
    assert basis.rank == 2
    other = basis.copy()
    other.add(0b001)
    assert basis.rank == 2 and other.rank == 3


def test_betti_of_hollow_and_filled_triangle():
    hollow = SimplicialComplex([(0, 1), (1, 2), (0, 2)])
    assert [betti_oracle(hollow, p) for p in range(3)] == [1, 1, 0]
    filled = SimplicialComplex([(0, 1, 2)])
    assert [betti_oracle(filled, p) for p in range(3)] == [1, 0, 0]


def test_betti_of_closed_surfaces(torus, sphere):
    assert [betti_oracle(torus.complex, p) for p in range(3)] == [1, 2, 1]
    assert [betti_oracle(sphere.complex, p) for p in range(3)] == [1, 0, 1]


def test_betti_of_solid_torus(torus_solid):
    k = torus_solid.complex
    assert [betti_oracle(k, p) for p in range(4)] == [1, 1, 0, 0]


def test_betti_rejects_negative_dimension():
    with pytest.raises(ArgumentError):
        betti_oracle(SimplicialComplex([(0,)]), -1)


def test_build_filtration_repairs_low_cofaces():
    k = SimplicialComplex([(0, 1, 2)])
    key = {s: 0.0 for s in k}
    key[(0, 1)] = 2.0
    key[(0, 1, 2)] = 1.0
    f = build_filtration(k, key)
    assert f.value(k.id_of((0, 1, 2))) == 2.0
    assert int(f.order[-1]) == k.id_of((0, 1, 2))


def test_build_filtration_breaks_ties_by_dimension():
    k = SimplicialComplex([(0, 1, 2)])
    f = build_filtration(k, np.zeros(len(k)))
    dims = [k.dim_of(int(s)) for s in f.order]
    assert dims == sorted(dims)


def test_filtration_rejects_face_after_coface():
    k = SimplicialComplex([(0, 1)])
    order = [k.id_of((0, 1)), k.id_of((0,)), k.id_of((1,))]
    with pytest.raises(FiltrationError):
        Filtration(k, np.array(order), np.zeros(3))


def test_filtration_rejects_decreasing_values():
    k = SimplicialComplex([(0,), (1,)])
    with pytest.raises(FiltrationError):
        Filtration(k, np.array([0, 1]), np.array([1.0, 0.5]))


def test_prefix_complex():
    k = SimplicialComplex([(0, 1, 2)])
    f = build_filtration(k, lambda s: float(len(s)))
    assert len(f.prefix_complex(3)) == 3
    assert f.prefix_complex(3).dimension == 0
