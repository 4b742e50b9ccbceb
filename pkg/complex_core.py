"""
Simplicial complexes over Z/2.

Simplices are sorted vertex tuples. A SimplicialComplex closes its input under
faces and assigns dense ids ordered by (dimension, vertex tuple), so the ids of
one dimension form a contiguous block. Chains are frozen id sets; Z/2 addition
is symmetric difference. The brute-force Betti oracle here is the reference
every persistence result is checked against.
"""
import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (
    ArgumentError,
    DimensionMismatchError,
    FiltrationError,
    SimplexLookupError,
)

logger = logging.getLogger(__name__)

Simplex = Tuple[int, ...]
SimplexRef = Union[int, Sequence[int]]

MAX_DIMENSION = 3


def make_simplex(vertices: Iterable[int]) -> Simplex:
    """Sort and validate a vertex list into a simplex tuple"""
    s = tuple(sorted(int(v) for v in vertices))
    if not 1 <= len(s) <= MAX_DIMENSION + 1:
        raise ArgumentError(f"simplex must have 1-{MAX_DIMENSION + 1} vertices, got {len(s)}")
    if len(set(s)) != len(s):
        raise ArgumentError(f"simplex vertices must be distinct: {s}")
    return s


def simplex_faces(s: Simplex) -> List[Simplex]:
    """Codimension-1 faces; empty for a vertex"""
    if len(s) == 1:
        return []
    return [s[:i] + s[i + 1:] for i in range(len(s))]


class Z2Basis:
    """
    Incremental echelon basis of Z/2 vectors stored as int bitmasks.

    The pivot of a vector is its highest set bit; adding a vector reduces it
    against the existing pivots first.
    """

    def __init__(self) -> None:
        self._pivots: Dict[int, int] = {}

    def reduce(self, vector: int) -> int:
        while vector:
            pivot = self._pivots.get(vector.bit_length() - 1)
            if pivot is None:
                return vector
            vector ^= pivot
        return 0

    def add(self, vector: int) -> bool:
        """Insert a vector; True when it was independent of the basis"""
        reduced = self.reduce(vector)
        if reduced:
            self._pivots[reduced.bit_length() - 1] = reduced
            return True
        return False

    def contains(self, vector: int) -> bool:
        return self.reduce(vector) == 0

    @property
    def rank(self) -> int:
        return len(self._pivots)

    def copy(self) -> "Z2Basis":
        other = Z2Basis()
        other._pivots = dict(self._pivots)
        return other


class SimplicialComplex:
    """
    Face-closed set of simplices (dimension 0-3) with dense, stable ids.

    Immutable after construction; derived tables are computed lazily and cached.
    """

    def __init__(self, simplices: Iterable[Sequence[int]]):
        closure = set()
        for raw in simplices:
            s = make_simplex(raw)
            if s in closure:
                continue
            for k in range(1, len(s) + 1):
                closure.update(itertools.combinations(s, k))
        ordered = sorted(closure, key=lambda t: (len(t), t))
        self._simplices: List[Simplex] = ordered
        self._index: Dict[Simplex, int] = {s: i for i, s in enumerate(ordered)}
        # _offsets[p] = first id of dimension p; _offsets[p + 1] = one past the last
        self._offsets = [0] * (MAX_DIMENSION + 2)
        counts = [0] * (MAX_DIMENSION + 1)
        for s in ordered:
            counts[len(s) - 1] += 1
        for p in range(MAX_DIMENSION + 1):
            self._offsets[p + 1] = self._offsets[p] + counts[p]

    def __len__(self) -> int:
        return len(self._simplices)

    def __iter__(self) -> Iterator[Simplex]:
        return iter(self._simplices)

    def __contains__(self, simplex: Sequence[int]) -> bool:
        return tuple(sorted(simplex)) in self._index

    def __repr__(self) -> str:
        counts = ", ".join(str(self.count(p)) for p in range(self.dimension + 1))
        return f"<SimplicialComplex(dim={self.dimension}, counts=[{counts}])>"

    @property
    def dimension(self) -> int:
        for p in range(MAX_DIMENSION, -1, -1):
            if self.count(p):
                return p
        return -1

    def count(self, p: int) -> int:
        if p < 0 or p > MAX_DIMENSION:
            return 0
        return self._offsets[p + 1] - self._offsets[p]

    def ids_of_dim(self, p: int) -> range:
        if p < 0 or p > MAX_DIMENSION:
            return range(0)
        return range(self._offsets[p], self._offsets[p + 1])

    def offset(self, p: int) -> int:
        return self._offsets[p]

    def simplex(self, simplex_id: int) -> Simplex:
        if not 0 <= simplex_id < len(self._simplices):
            raise SimplexLookupError(f"unknown simplex id {simplex_id}")
        return self._simplices[simplex_id]

    def id_of(self, simplex: Sequence[int]) -> int:
        key = tuple(sorted(int(v) for v in simplex))
        try:
            return self._index[key]
        except KeyError:
            raise SimplexLookupError(f"simplex {key} is not in the complex") from None

    def resolve(self, ref: SimplexRef) -> int:
        """Accept either an id or a vertex tuple"""
        if isinstance(ref, (int, np.integer)):
            self.simplex(int(ref))
            return int(ref)
        return self.id_of(ref)

    def dim_of(self, simplex_id: int) -> int:
        return len(self.simplex(simplex_id)) - 1

    def face_ids(self, simplex_id: int) -> Tuple[int, ...]:
        return tuple(self._index[f] for f in simplex_faces(self.simplex(simplex_id)))

    @cached_property
    def dimensions(self) -> np.ndarray:
        """Dimension of every simplex, indexed by id"""
        out = np.empty(len(self), dtype=np.int64)
        for p in range(MAX_DIMENSION + 1):
            out[self._offsets[p]:self._offsets[p + 1]] = p
        return out

    def simplex_array(self, p: int) -> np.ndarray:
        """(count(p), p + 1) array of the vertex tuples of the p-simplices"""
        return np.array([self._simplices[i] for i in self.ids_of_dim(p)], dtype=np.int64).reshape(self.count(p), p + 1)

    def face_array(self, p: int) -> np.ndarray:
        """(count(p), p + 1) array of face ids of the p-simplices"""
        return self._face_arrays[p]

    @cached_property
    def _face_arrays(self) -> List[np.ndarray]:
        arrays = [np.zeros((self.count(0), 0), dtype=np.int64)]
        for p in range(1, MAX_DIMENSION + 1):
            rows = [[self._index[f] for f in simplex_faces(self._simplices[i])] for i in self.ids_of_dim(p)]
            arrays.append(np.array(rows, dtype=np.int64).reshape(self.count(p), p + 1))
        return arrays

    def chain(self, simplices: Iterable[SimplexRef]) -> "Chain":
        """Build a chain from ids or vertex tuples; repeated entries cancel"""
        members = set()
        dims = set()
        for ref in simplices:
            sid = self.resolve(ref)
            members ^= {sid}
            dims.add(self.dim_of(sid))
        if len(dims) > 1:
            raise DimensionMismatchError(f"chain mixes dimensions {sorted(dims)}")
        return Chain(frozenset(members), dims.pop() if dims else None)

    def mask_of(self, chain: "Chain") -> int:
        """Bitmask over the local (per-dimension) indices of the chain's simplices"""
        if chain.is_empty:
            return 0
        off = self.offset(chain.dim)
        mask = 0
        for sid in chain.members:
            mask |= 1 << (sid - off)
        return mask

    def boundary_basis(self, p: int) -> Z2Basis:
        """Echelon basis of im(boundary_p) inside C_{p-1}; cached per dimension"""
        cache = self._boundary_bases
        if p not in cache:
            basis = Z2Basis()
            if 1 <= p <= MAX_DIMENSION and self.count(p):
                off = self.offset(p - 1)
                for faces in self.face_array(p):
                    mask = 0
                    for f in faces:
                        mask |= 1 << (int(f) - off)
                    basis.add(mask)
            cache[p] = basis
        return cache[p]

    @cached_property
    def _boundary_bases(self) -> Dict[int, Z2Basis]:
        return {}

    def boundary_rank(self, p: int) -> int:
        if p <= 0:
            return 0
        return self.boundary_basis(p).rank


@dataclass(frozen=True)
class Chain:
    """Z/2 chain: a set of simplex ids of a single dimension (None when empty)"""

    members: frozenset = field(default_factory=frozenset)
    dim: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(m) for m in self.members))
        if not self.members:
            object.__setattr__(self, "dim", None)
        elif self.dim is None:
            raise ArgumentError("a non-empty chain needs a dimension")

    def __add__(self, other: "Chain") -> "Chain":
        return add_chains(self, other)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.members))

    def __bool__(self) -> bool:
        return bool(self.members)

    @property
    def is_empty(self) -> bool:
        return not self.members


def add_chains(c1: Chain, c2: Chain) -> Chain:
    """Z/2 addition (symmetric difference)"""
    if c1.dim is not None and c2.dim is not None and c1.dim != c2.dim:
        raise DimensionMismatchError(f"cannot add a {c1.dim}-chain and a {c2.dim}-chain")
    dim = c1.dim if c1.dim is not None else c2.dim
    return Chain(c1.members ^ c2.members, dim)


def boundary(complex_: SimplicialComplex, s: SimplexRef) -> Chain:
    """Boundary of one simplex: its codimension-1 faces"""
    sid = complex_.resolve(s)
    faces = complex_.face_ids(sid)
    if not faces:
        return Chain()
    return Chain(frozenset(faces), complex_.dim_of(sid) - 1)


def boundary_of_chain(complex_: SimplicialComplex, chain: Chain) -> Chain:
    result = set()
    for sid in chain.members:
        result.symmetric_difference_update(complex_.face_ids(sid))
    if not result:
        return Chain()
    return Chain(frozenset(result), chain.dim - 1)


def is_cycle(complex_: SimplicialComplex, chain: Chain) -> bool:
    return boundary_of_chain(complex_, chain).is_empty


@dataclass(frozen=True, eq=False)
class Filtration:
    """
    Total order over the simplices of a complex with a scale value per simplex.

    ``order`` lists simplex ids; ``values`` and ``position`` are indexed by id.
    Construction verifies face precedence and monotone values.
    """

    complex: SimplicialComplex
    order: np.ndarray
    values: np.ndarray
    position: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.complex)
        order = np.asarray(self.order, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if order.shape != (n,) or values.shape != (n,):
            raise FiltrationError(f"order/values must cover all {n} simplices")
        position = np.full(n, -1, dtype=np.int64)
        position[order] = np.arange(n)
        if n and (position < 0).any():
            raise FiltrationError("order is not a permutation of the simplex ids")
        if n and not np.all(np.isfinite(values)):
            raise FiltrationError("filtration values must be finite")
        if n and (values < 0).any():
            raise FiltrationError("filtration values must be nonnegative")
        if n > 1 and (np.diff(values[order]) < 0).any():
            raise FiltrationError("values decrease along the order")
        for p in range(1, MAX_DIMENSION + 1):
            if not self.complex.count(p):
                continue
            ids = np.asarray(self.complex.ids_of_dim(p))
            faces = self.complex.face_array(p)
            if (position[faces].max(axis=1) >= position[ids]).any():
                raise FiltrationError(f"a face of some {p}-simplex does not precede it")
        for name, arr in (("order", order), ("values", values), ("position", position)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.order)

    def value(self, simplex_id: int) -> float:
        return float(self.values[simplex_id])

    def prefix_complex(self, k: int) -> SimplicialComplex:
        """Complex formed by the first k simplices of the order"""
        return SimplicialComplex(self.complex.simplex(int(i)) for i in self.order[:k])


KeyLike = Union[Mapping[Simplex, float], Callable[[Simplex], float], Sequence[float], np.ndarray]


def _raw_key(complex_: SimplicialComplex, key: KeyLike) -> np.ndarray:
    n = len(complex_)
    if isinstance(key, np.ndarray) or (isinstance(key, Sequence) and not isinstance(key, (str, bytes))):
        raw = np.array(key, dtype=np.float64)
        if raw.shape != (n,):
            raise ArgumentError(f"key array must have one value per simplex ({n})")
        return raw
    if isinstance(key, Mapping):
        try:
            return np.array([float(key[s]) for s in complex_], dtype=np.float64)
        except KeyError as exc:
            raise ArgumentError(f"key is undefined on simplex {exc.args[0]}") from None
    return np.array([float(key(s)) for s in complex_], dtype=np.float64)


def build_filtration(complex_: SimplicialComplex, key: KeyLike) -> Filtration:
    """
    Sort simplices by (value, dimension, id) after lower-star repair.

    A simplex whose key is below one of its faces is raised to the max over
    its faces, which makes every key admissible.
    """
    values = _raw_key(complex_, key)
    repaired = 0
    for p in range(1, MAX_DIMENSION + 1):
        if not complex_.count(p):
            continue
        ids = np.asarray(complex_.ids_of_dim(p))
        face_max = values[complex_.face_array(p)].max(axis=1)
        low = values[ids] < face_max
        repaired += int(low.sum())
        values[ids] = np.maximum(values[ids], face_max)
    if repaired:
        logger.debug("lower-star repair raised %d simplex values", repaired)
    ids = np.arange(len(complex_))
    order = np.lexsort((ids, complex_.dimensions, values))
    return Filtration(complex_, order, values)


def betti_oracle(complex_: SimplicialComplex, p: int) -> int:
    """rank H_p = dim ker(boundary_p) - rank(boundary_{p+1}), by Z/2 elimination"""
    if p < 0:
        raise ArgumentError("homology dimension must be nonnegative")
    n_p = complex_.count(p)
    if n_p == 0:
        return 0
    return n_p - complex_.boundary_rank(p) - complex_.boundary_rank(p + 1)
