"""
Persistence pairing over Z/2

Standard column reduction in filtration order, representative-cycle tracing for
negative triangles, persistence diagrams and the Rips/Čech point-cloud builders.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Collection, Dict, FrozenSet, List, Optional, Set, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

from complex_core import Chain, Filtration, SimplicialComplex, build_filtration
from errors import ArgumentError, ParseError

logger = logging.getLogger(__name__)


class Sign(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True, eq=False)
class Pairing:
    """
    Result of the reduction.

    ``pairs`` maps a positive simplex id to the negative simplex that kills it;
    ``reduced_chain`` keeps the reduced boundary of every negative simplex.
    """

    filtration: Filtration
    pairs: Dict[int, int]
    positive_unpaired: FrozenSet[int]
    sign: Dict[int, Sign]
    reduced_chain: Dict[int, Chain]

    @property
    def partner(self) -> Dict[int, int]:
        """negative id -> positive id"""
        return {neg: pos for pos, neg in self.pairs.items()}

    def killer_of(self, simplex_id: int) -> Optional[int]:
        return self.pairs.get(simplex_id)

    def is_positive(self, simplex_id: int) -> bool:
        return self.sign[simplex_id] is Sign.POSITIVE

    def positives(self, dim: Optional[int] = None) -> List[int]:
        k = self.filtration.complex
        return [s for s, sg in self.sign.items() if sg is Sign.POSITIVE and (dim is None or k.dim_of(s) == dim)]

    def negatives(self, dim: Optional[int] = None) -> List[int]:
        k = self.filtration.complex
        return [s for s, sg in self.sign.items() if sg is Sign.NEGATIVE and (dim is None or k.dim_of(s) == dim)]

    def __len__(self) -> int:
        return len(self.pairs)


def pair(f: Filtration) -> Pairing:
    """
    Classify every simplex as positive or negative and match them.

    For each simplex in order its boundary is reduced by the stored reduced
    chains of earlier negative simplices until its youngest entry is unpaired.
    A nonempty remainder makes the simplex negative.
    """
    complex_ = f.complex
    order = f.order
    position = f.position
    killer_at: Dict[int, int] = {}          # position of positive -> position of negative
    reduced: Dict[int, Set[int]] = {}       # position of negative -> reduced column (positions)
    sign: Dict[int, Sign] = {}

    for j in range(len(order)):
        sid = int(order[j])
        column = {int(position[face]) for face in complex_.face_ids(sid)}
        while column:
            low = max(column)
            k = killer_at.get(low)
            if k is None:
                break
            column ^= reduced[k]
        if column:
            killer_at[max(column)] = j
            reduced[j] = column
            sign[sid] = Sign.NEGATIVE
        else:
            sign[sid] = Sign.POSITIVE

    pairs = {int(order[low]): int(order[j]) for low, j in killer_at.items()}
    unpaired = frozenset(s for s, sg in sign.items() if sg is Sign.POSITIVE and s not in pairs)
    reduced_chain = {
        int(order[j]): Chain(frozenset(int(order[i]) for i in col), complex_.dim_of(int(order[j])) - 1)
        for j, col in reduced.items()
    }
    logger.debug("pairing: %d pairs, %d essential classes", len(pairs), len(unpaired))
    return Pairing(f, pairs, unpaired, sign, reduced_chain)


def prefix_betti(pairing: Pairing, k: int, p: int) -> int:
    """
    Betti number of the first k simplices, read off the pairing:
    positive p-simplices in the prefix minus negative (p+1)-simplices in it.
    """
    f = pairing.filtration
    dims = f.complex.dimensions
    born = 0
    died = 0
    for sid in f.order[:k]:
        sid = int(sid)
        d = dims[sid]
        if d == p and pairing.sign[sid] is Sign.POSITIVE:
            born += 1
        elif d == p + 1 and pairing.sign[sid] is Sign.NEGATIVE:
            died += 1
    return born - died


def _is_surface_generator(pairing: Pairing, tau: int, boundary: Collection[int]) -> bool:
    if tau not in boundary or not pairing.is_positive(tau):
        return False
    killer = pairing.killer_of(tau)
    return killer is None or killer not in boundary


def mark_loop(
    pairing: Pairing,
    d: int,
    f: Optional[Filtration] = None,
    boundary: Optional[Collection[int]] = None,
) -> Chain:
    """
    Trace the 1-cycle created when triangle ``d`` kills a loop.

    Starting from the boundary of ``d``, the youngest edge is repeatedly
    cancelled with the reduced chain of the earlier triangle that killed it.
    With a ``boundary`` subcomplex (simplex ids of the surface), the walk
    stops as soon as the youngest edge is a surface generator, i.e. a surface
    edge not killed by a surface triangle.
    """
    f = f or pairing.filtration
    complex_ = f.complex
    if d not in pairing.sign:
        raise ArgumentError(f"simplex {d} is not part of the pairing")
    if complex_.dim_of(d) != 2 or pairing.sign[d] is not Sign.NEGATIVE:
        raise ArgumentError(f"simplex {d} is not a negative triangle")

    order = f.order
    position = f.position
    d_pos = int(position[d])
    surface = set(boundary) if boundary is not None else None
    column = {int(position[face]) for face in complex_.face_ids(d)}
    while column:
        tau = int(order[max(column)])
        if surface is not None and _is_surface_generator(pairing, tau, surface):
            break
        killer = pairing.killer_of(tau)
        if killer is None or int(position[killer]) >= d_pos:
            break
        column ^= {int(position[s]) for s in pairing.reduced_chain[killer].members}
    return Chain(frozenset(int(order[i]) for i in column), 1)


@dataclass(frozen=True)
class PersistencePoint:
    dim: int
    birth: float
    death: float

    @property
    def persistence(self) -> float:
        return self.death - self.birth


@dataclass(frozen=True)
class PersistenceDiagram:
    points: Tuple[PersistencePoint, ...] = ()

    def __len__(self) -> int:
        return len(self.points)

    def finite(self, dim: Optional[int] = None) -> List[PersistencePoint]:
        return [pt for pt in self.points if math.isfinite(pt.death) and (dim is None or pt.dim == dim)]

    def essential(self, dim: Optional[int] = None) -> List[PersistencePoint]:
        return [pt for pt in self.points if math.isinf(pt.death) and (dim is None or pt.dim == dim)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(pt.dim, pt.birth, pt.death) for pt in self.points],
            columns=["dim", "birth", "death"],
        )

    def to_csv(self, path) -> None:
        """Write ``dim,birth,death``; infinite deaths are written as ``inf``"""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def diagram(pairing: Pairing, f: Optional[Filtration] = None, drop_zero_persistence: bool = False) -> PersistenceDiagram:
    """One point per pair plus one infinite point per unpaired positive simplex"""
    f = f or pairing.filtration
    complex_ = f.complex
    points = []
    for positive, negative in pairing.pairs.items():
        birth, death = f.value(positive), f.value(negative)
        if drop_zero_persistence and death == birth:
            continue
        points.append(PersistencePoint(complex_.dim_of(positive), birth, death))
    for positive in pairing.positive_unpaired:
        points.append(PersistencePoint(complex_.dim_of(positive), f.value(positive), math.inf))
    points.sort(key=lambda pt: (pt.dim, pt.birth, pt.death))
    return PersistenceDiagram(tuple(points))


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 3))
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ArgumentError("points must be an (n, 2) or (n, 3) array")
    if pts.shape[1] == 2:
        pts = np.hstack([pts, np.zeros((len(pts), 1))])
    return pts


def _check_builder_args(max_eps: float, max_dim: int) -> None:
    if not max_eps > 0:
        raise ArgumentError(f"max_eps must be positive, got {max_eps}")
    if max_dim not in (0, 1, 2):
        raise ArgumentError(f"max_dim must be 0, 1 or 2, got {max_dim}")


def _clique_simplices(dist: np.ndarray, max_eps: float, max_dim: int):
    n = len(dist)
    yield from ((i,) for i in range(n))
    if max_dim < 1:
        return
    adjacent = dist <= max_eps
    for i, j in itertools.combinations(range(n), 2):
        if not adjacent[i, j]:
            continue
        yield (i, j)
        if max_dim < 2:
            continue
        for k in range(j + 1, n):
            if adjacent[i, k] and adjacent[j, k]:
                yield (i, j, k)


def rips_filtration(points, max_eps: float, max_dim: int = 2) -> Filtration:
    """Vietoris-Rips filtration: a simplex enters at its largest pairwise distance"""
    _check_builder_args(max_eps, max_dim)
    pts = _as_points(points)
    dist = squareform(pdist(pts)) if len(pts) > 1 else np.zeros((len(pts), len(pts)))
    simplices = list(_clique_simplices(dist, max_eps, max_dim))
    complex_ = SimplicialComplex(simplices)

    def key(s):
        if len(s) == 1:
            return 0.0
        return max(dist[a, b] for a, b in itertools.combinations(s, 2))

    return build_filtration(complex_, key)


def enclosing_ball_diameter(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Diameter of the smallest ball containing three points"""
    sides = sorted([float(np.linalg.norm(b - c)), float(np.linalg.norm(a - c)), float(np.linalg.norm(a - b))])
    s1, s2, longest = sides
    area2 = float(np.linalg.norm(np.cross(b - a, c - a)))
    # obtuse, right or degenerate: the longest side is a diameter
    if area2 <= 1e-15 * max(longest, 1.0) ** 2 or s1 * s1 + s2 * s2 <= longest * longest:
        return longest
    return s1 * s2 * longest / area2


def cech_filtration(points, max_eps: float, max_dim: int = 2) -> Filtration:
    """Čech filtration up to triangles, using the closed-form minimal enclosing ball"""
    _check_builder_args(max_eps, max_dim)
    pts = _as_points(points)
    dist = squareform(pdist(pts)) if len(pts) > 1 else np.zeros((len(pts), len(pts)))
    values: Dict[Tuple[int, ...], float] = {}
    for s in _clique_simplices(dist, max_eps, max_dim):
        if len(s) == 1:
            values[s] = 0.0
        elif len(s) == 2:
            values[s] = float(dist[s[0], s[1]])
        else:
            v = enclosing_ball_diameter(pts[s[0]], pts[s[1]], pts[s[2]])
            if v <= max_eps:
                values[s] = v
    complex_ = SimplicialComplex(values.keys())
    return build_filtration(complex_, values)


def read_points_csv(path) -> np.ndarray:
    """Point cloud CSV with columns ``x,y,z`` (``z`` optional)"""
    frame = pd.read_csv(path)
    cols = [c for c in ("x", "y", "z") if c in frame.columns]
    if cols[:2] != ["x", "y"]:
        raise ParseError("point CSV needs x,y[,z] columns", path=str(path))
    return frame[cols].to_numpy(dtype=np.float64)
