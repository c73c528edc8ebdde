import math
import threading

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from lbs_estimator.client.ledger import LedgerSnapshot
from lbs_estimator.types.common import SpatialTuple
from lbs_estimator.types.geometry import CellComplex, ConvexCell, HalfPlane, Point2


class History:
    """
    Everything learned from earlier queries in a run: every tuple ever returned (with its location) and,
    per (owner, h), the points already certified to return the owner within its first h entries. Both
    only ever grow, and merges are atomic so concurrent cell computations can share one history.
    """
    def __init__(self):
        self.seen: Dict[str, SpatialTuple] = {}
        self.certified: Dict[Tuple[str, int], List[Point2]] = {}
        self._lock = threading.Lock()

    def merge(self, tuples: Iterable[SpatialTuple]) -> int:
        """
        Adds newly returned tuples.

        :return: number of tuples that were not seen before
        """
        added = 0
        with self._lock:
            for t in tuples:
                if t.id not in self.seen:
                    self.seen[t.id] = t
                    added += 1
        return added

    def add_certified(self, owner: str, h: int, points: Iterable[Point2]):
        with self._lock:
            self.certified.setdefault((owner, h), []).extend(points)

    def certified_points(self, owner: str, h: int) -> List[Point2]:
        with self._lock:
            return list(self.certified.get((owner, h), []))

    def tuples(self) -> List[SpatialTuple]:
        """
        Gets a consistent copy of the seen tuples, safe to use while other tasks keep merging.
        """
        with self._lock:
            return list(self.seen.values())

    def __len__(self):
        with self._lock:
            return len(self.seen)


class VarianceReductionPolicy:
    # forward declaration
    pass


@dataclass(frozen=True)
class VarianceReductionPolicy:
    """
    Adaptive choice of h per returned tuple: the largest h whose history-derived volume bound stays
    under lambda0, else 1.
    """

    lambda0: Optional[float] = None
    """
    Volume threshold; None means area(region) / max(running COUNT estimate, 1), refreshed periodically
    """

    enabled: bool = True
    """
    When disabled every tuple uses h = 1
    """

    def __post_init__(self):
        if self.lambda0 is not None and not self.lambda0 >= 0.0:
            raise ValueError(f'lambda0 must be >= 0; got {self.lambda0}')

    @staticmethod
    def disabled() -> VarianceReductionPolicy:
        return VarianceReductionPolicy(enabled=False)


class LrCellOptions:
    # forward declaration
    pass


@dataclass(frozen=True)
class LrCellOptions:
    """
    Switches and knobs of exact cell computation in location-returned mode. Every combination yields
    the same final exact cell; they only change how many queries it takes.
    """

    use_history: bool = True
    """
    Start from the bisectors of every tuple seen so far and reuse earlier certified points
    """

    fast_init: bool = True
    """
    Seed the computation with four fake tuples forming a box around the owner
    """

    fast_init_halfwidth: Optional[float] = None
    """
    Half-width of the fake box; None for 2x the nearest known tuple distance, else 5% of the region width
    """

    monte_carlo: bool = True
    """
    Allow stopping early and estimating the volume ratio by Monte-Carlo trials
    """

    mc_gamma: float = 0.1
    """
    Switch to Monte-Carlo once area(upper) <= (1 + gamma) * area(lower region)
    """

    vertex_cap: int = 64
    """
    Switch to Monte-Carlo (or give up exactness) after this many vertex queries for one cell
    """

    arc_samples: int = 32
    """
    Points tested along the max-radius circle, only used when the service has a max radius
    """

    def __post_init__(self):
        if self.fast_init_halfwidth is not None and not self.fast_init_halfwidth > 0.0:
            raise ValueError(f'fast_init_halfwidth must be > 0; got {self.fast_init_halfwidth}')
        if not self.mc_gamma >= 0.0:
            raise ValueError(f'mc_gamma must be >= 0; got {self.mc_gamma}')
        if self.vertex_cap < 1:
            raise ValueError(f'vertex_cap must be >= 1; got {self.vertex_cap}')
        if self.arc_samples < 4:
            raise ValueError(f'arc_samples must be >= 4; got {self.arc_samples}')

    @staticmethod
    def baseline() -> LrCellOptions:
        """
        Plain vertex-testing computation with every optimization switched off.
        """
        return LrCellOptions(use_history=False, fast_init=False, monte_carlo=False)


@dataclass(frozen=True)
class FastInitResult:
    """
    Outcome of the four fake-box corner queries around a tuple.
    """

    tuples: Tuple[SpatialTuple, ...]
    """
    Real tuples discovered by the corner queries, owner excluded
    """

    cell: CellComplex
    """
    Starting cell built from the discovered tuples, or the whole region on fallback
    """

    fallback: bool
    """
    True when the discovered tuples do not enclose the owner; the four queries were wasted
    """

    queries: int = 4


class CellEstimate:
    # forward declaration
    pass


@dataclass(frozen=True)
class CellEstimate:
    """
    What one cell computation learned about a tuple's top-h cell: a region known to contain it, the
    certified points spanning a region known to lie inside it, and either exactness or a Monte-Carlo
    trial count relating the two.
    """

    owner: SpatialTuple
    """
    The tuple whose cell this is, location included
    """

    h: int
    """
    Which top-h cell was computed
    """

    upper: CellComplex
    """
    Region containing the true cell; equal to it when exact
    """

    certified: Tuple[Point2, ...] = ()
    """
    Points whose queries returned the owner within the first h entries
    """

    lower: Optional[ConvexCell] = None
    """
    Convex hull of the owner and the certified points; intersected with upper it lies inside the true cell
    """

    exact: bool = False
    """
    True once every boundary point of upper has been certified
    """

    volume: float = 0.0
    """
    Area of the true cell when exact, else area(upper) / mc_trials when trials ran, else area(upper)
    """

    mc_trials: Optional[int] = None
    """
    Trials until the first Monte-Carlo hit, when the Monte-Carlo shortcut was used
    """

    ledger_delta: LedgerSnapshot = field(default_factory=LedgerSnapshot)
    """
    Queries spent on this cell, by phase
    """

    exhausted: bool = False
    """
    The query budget ran out before the cell was finished
    """

    fast_init_fallback: bool = False
    """
    Fast initialization discovered nothing and its four queries were wasted
    """


class BinarySearchParams:
    # forward declaration
    pass


@dataclass(frozen=True)
class BinarySearchParams:
    """
    Resolution of the edge binary search. delta bounds the final straddling segment length and
    delta_prime the lateral offset of the auxiliary rays; both derive from a single edge error target.
    """

    delta: float
    """
    Target length of the segment straddling the edge when the search stops
    """

    delta_prime: float
    """
    Lateral offset of the two auxiliary rays
    """

    b: float
    """
    Perimeter of the bounding region
    """

    epsilon: Optional[float] = None
    """
    The edge error target these parameters were derived from, when known
    """

    max_edges: int = 256
    """
    Cap on edges discovered for one cell
    """

    def __post_init__(self):
        if not (self.delta > 0.0 and self.delta_prime > 0.0 and self.b > 0.0):
            raise ValueError(f'delta, delta_prime and b must be > 0; got {self.delta}, {self.delta_prime}, {self.b}')

    @staticmethod
    def from_epsilon(epsilon: float, region: ConvexCell, max_edges: int = 256) -> BinarySearchParams:
        """
        Derives search parameters guaranteeing a maximum edge error of epsilon inside the region:
        delta_prime = epsilon / 2 and delta = tan(asin(epsilon / b)) * epsilon / 2.

        :param epsilon: maximum edge error target, smaller than the region perimeter
        :param region: the bounding region
        :param max_edges: cap on edges discovered per cell
        :return: the derived parameters
        """
        xmin, ymin, xmax, ymax = region.bounds()
        b = 2 * ((xmax - xmin) + (ymax - ymin))
        if not 0.0 < epsilon < b:
            raise ValueError(f'epsilon must be in (0, {b}); got {epsilon}')
        delta = math.tan(math.asin(epsilon / b)) * epsilon / 2
        return BinarySearchParams(delta, epsilon / 2, b, epsilon, max_edges)

    def max_queries(self) -> int:
        """
        Upper bound on the queries of one edge search.
        """
        return int(3 * math.ceil(math.log2(self.b / self.delta)) + 4)


class EdgeSource(Enum):
    """
    How an estimated edge's line was obtained.
    """

    MIDPOINTS = 'midpoints'
    """
    Line through the midpoints of the main and an auxiliary straddling segment
    """

    SEGMENT_BISECTOR = 'segment_bisector'
    """
    Both auxiliary rays failed; perpendicular bisector of the main straddling segment
    """

    REGION = 'region'
    """
    The search reached the bounding region, whose side is the edge
    """


class EstimatedEdge:
    # forward declaration
    pass


@dataclass(frozen=True)
class EstimatedEdge:
    """
    One edge of a rank-only cell found by binary search, oriented to contain the owner's side.
    """

    line: HalfPlane
    """
    Half-plane on the owner's side of the edge
    """

    witnesses: Tuple[Point2, Point2]
    """
    (inside, outside) ends of the final main segment: the predicate holds at the first, fails at the second
    """

    source: EdgeSource
    """
    How the line was derived
    """

    neighbor_id: Optional[str] = None
    """
    Tuple taking the owner's place across the edge, when one was observed
    """

    aux_witnesses: Optional[Tuple[Point2, Point2]] = None
    """
    Ends of the auxiliary segment used for the line, if any
    """

    queries: int = 0
    """
    Queries the search issued
    """


class LnrCellResult:
    # forward declaration
    pass


@dataclass(frozen=True)
class LnrCellResult:
    """
    An estimated top-h cell in rank-only mode: a region inside the true cell up to the edge error,
    together with the edges that bound it.
    """

    owner: str
    """
    Id of the tuple whose cell this is
    """

    h: int
    """
    Which top-h cell was estimated
    """

    polygon: CellComplex
    """
    The estimated cell; a single convex face for h = 1
    """

    epsilon: float
    """
    Maximum edge error the search parameters guarantee
    """

    edges: Tuple[EstimatedEdge, ...] = ()
    """
    Edges discovered for this cell, in discovery order
    """

    label_edges: Tuple[Optional[int], ...] = ()
    """
    For h = 1: for each half-plane of the single face, the index into edges, or None for region sides
    """

    neighbors: FrozenSet[str] = frozenset()
    """
    Ids observed across edges or alongside the owner
    """

    seed: Optional[Point2] = None
    """
    The query location the computation started from
    """

    ledger_delta: LedgerSnapshot = field(default_factory=LedgerSnapshot)
    """
    Queries spent on this cell, by phase
    """

    converged: bool = True
    """
    False when the edge cap stopped the computation before every vertex passed its test
    """

    exhausted: bool = False
    """
    The query budget ran out before the cell was finished
    """

    @property
    def edge_count(self) -> int:
        return len(self.edges)


class Localization:
    # forward declaration
    pass


@dataclass(frozen=True)
class Localization:
    """
    A tuple location inferred from the geometry of its estimated rank-only cell.
    """

    owner: str
    """
    Id of the located tuple
    """

    location: Point2
    """
    Inferred location
    """

    cell: LnrCellResult
    """
    The cell estimate the location was inferred from
    """

    ledger_delta: LedgerSnapshot = field(default_factory=LedgerSnapshot)
    """
    Queries spent on the cell and the inference together
    """

    satisfies: Optional[bool] = None
    """
    Outcome of the location condition on the inferred location, when one was given
    """
