import logging
import math

from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import shapely.geometry

from lbs_estimator.api.core import CellApi, Oracle
from lbs_estimator.client.ledger import BudgetExhaustedError, QueryLedger, QueryPhase
from lbs_estimator.geometry.arrangement import (boundary_rings, complex_area, complex_contains, complex_to_shapely,
                                                sample_complex, topk_cell_from_locations)
from lbs_estimator.geometry.circles import Coverage, circle_union_covers
from lbs_estimator.geometry.polygons import clip_all, contains, perpendicular_bisector, segment_circle_crossings
from lbs_estimator.types.cells import (CellEstimate, FastInitResult, History, LrCellOptions,
                                       VarianceReductionPolicy)
from lbs_estimator.types.common import AttributeCondition, LbsMode, QueryAnswer, SpatialTuple
from lbs_estimator.types.estimates import DensityGrid
from lbs_estimator.types.geometry import TAU_GEOM, CellComplex, Circle, ConvexCell, HalfPlane, Point2

logger = logging.getLogger(__name__)

CERTIFIED_TOLERANCE = 1e-8
"""
Test points this close to an already certified point are not queried again
"""

DEFAULT_HALFWIDTH_FRACTION = 0.05


class LrCellApi(CellApi):
    """
    Cell computations for location-returned services: exact top-h cells certified by vertex queries,
    with fast initialization, reuse of earlier answers, adaptive choice of h and the Monte-Carlo
    shortcut for cells that are expensive to finish.
    """
    def __init__(self, oracle: Oracle, condition: Optional[AttributeCondition] = None,
                 options: Optional[LrCellOptions] = None, history: Optional[History] = None):
        """
        :param oracle: a location-returned service
        :param condition: optional pass-through filter; cells are relative to the tuples passing it
        :param options: default computation switches
        :param history: default history store shared by computations of this API
        """
        super().__init__(oracle, condition)
        if oracle.mode != LbsMode.LR:
            raise ValueError(f'LrCellApi needs a location-returned service; got {oracle.mode.value}')
        self.options = options if options is not None else LrCellOptions()
        self.history = history if history is not None else History()

    def compute_cell_exact(self, t: SpatialTuple, h: int = 1, history: Optional[History] = None,
                           options: Optional[LrCellOptions] = None) -> CellEstimate:
        """
        Computes the top-h cell of a tuple by repeatedly querying the boundary points of the cell built
        from every tuple known so far, until each of them is certified: its query covered a radius
        reaching the owner, so no unknown tuple can change the boundary there. With the Monte-Carlo
        shortcut enabled the loop may stop early, leaving a non-exact estimate whose volume ratio is
        then measured by `mc_volume_ratio`.

        :param t: the owner tuple, location known from an earlier answer
        :param h: which top-h cell to compute, 1 <= h <= k
        :param history: store of earlier answers; defaults to the API's own
        :param options: computation switches; default to the API's own
        :return: the estimate; on budget exhaustion a partial one with `exhausted` set
        """
        history = history if history is not None else self.history
        options = options if options is not None else self.options
        self._check_h(h)

        tally = QueryLedger()
        disk = self._disk(t)
        known: Dict[str, SpatialTuple] = {}
        certified: List[Point2] = []
        if options.use_history:
            known.update({s.id: s for s in history.tuples() if s.id != t.id})
            certified.extend(history.certified_points(t.id, h))
        reused = len(certified)

        fallback = False
        exact = False
        exhausted = False
        vertex_queries = 0
        try:
            if options.fast_init:
                init = self.fast_init(t, self._halfwidth(t, known.values(), options), tally)
                self._absorb(init.tuples, t, known, history)
                fallback = init.fallback
            while True:
                upper = topk_cell_from_locations(t, list(known.values()), h, self._region(), disk)
                pending = self._pending_points(t, upper, certified, options)
                if not pending:
                    exact = True
                    break
                if options.monte_carlo and (vertex_queries >= options.vertex_cap or
                                            self._close_enough(t, upper, certified, options.mc_gamma)):
                    logger.debug(f'cell of {t.id}: switching to Monte-Carlo after {vertex_queries} vertex queries')
                    break

                v = pending[0]
                answer = self._query(v, QueryPhase.VERTEX_TEST, tally)
                vertex_queries += 1
                added = self._absorb([e.to_tuple() for e in answer.entries], t, known, history)
                if self._certifies(answer, t, v):
                    certified.append(v)
                elif not added:
                    logger.debug(f'cell of {t.id}: accepting uninformative vertex ({v.x}, {v.y})')
                    certified.append(v)
        except BudgetExhaustedError:
            exhausted = True
            upper = topk_cell_from_locations(t, list(known.values()), h, self._region(), disk)

        history.add_certified(t.id, h, certified[reused:])
        return CellEstimate(owner=t, h=h, upper=upper, certified=tuple(certified),
                            lower=_hull_cell(t, certified), exact=exact, volume=complex_area(upper),
                            ledger_delta=tally.snapshot(), exhausted=exhausted, fast_init_fallback=fallback)

    def fast_init(self, t: SpatialTuple, box_halfwidth: float, tally: Optional[QueryLedger] = None) -> FastInitResult:
        """
        Queries the four corners of a box around the tuple, which is where the vertices of its cell would
        be if four fake tuples surrounded it. The discovered tuples are kept either way; the result is a
        fallback when they do not enclose the owner, in which case the starting cell is the region.

        :param t: the owner tuple
        :param box_halfwidth: half-width of the box
        :param tally: optional local ledger of the surrounding computation
        :return: the discovered tuples and the starting cell
        """
        xmin, ymin, xmax, ymax = self._region().bounds()
        found: Dict[str, SpatialTuple] = {}
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                corner = Point2(min(max(t.loc.x + sx * box_halfwidth, xmin), xmax),
                                min(max(t.loc.y + sy * box_halfwidth, ymin), ymax))
                for entry in self._query(corner, QueryPhase.INIT, tally).entries:
                    if entry.id != t.id:
                        found[entry.id] = entry.to_tuple()

        tuples = tuple(found.values())
        if _encloses(t, tuples):
            cell = topk_cell_from_locations(t, tuples, 1, self._region(), self._disk(t))
            return FastInitResult(tuples, cell, False)
        logger.debug(f'fast init around {t.id} fell back to the region; {len(tuples)} tuples discovered')
        return FastInitResult(tuples, CellComplex(t.id, (self._region(),), self._disk(t)), True)

    def history_init(self, t: SpatialTuple, history: Optional[History] = None) -> ConvexCell:
        """
        Offline starting cell: the region cut by the bisectors between the tuple and every tuple in the
        history. Issues no queries and always contains the true top-1 cell.
        """
        history = history if history is not None else self.history
        halfplanes = [perpendicular_bisector(t.loc, s.loc) for s in history.tuples()
                      if s.id != t.id and s.loc.distance_to(t.loc) > TAU_GEOM]
        return clip_all(self._region(), halfplanes)

    def lambda_upper(self, t: SpatialTuple, h: int, tuples: Optional[Sequence[SpatialTuple]] = None) -> float:
        """
        Upper bound on the volume of the tuple's top-h cell: the area of that cell computed from the
        historically retrieved tuples only.

        :param t: the tuple
        :param h: which top-h cell
        :param tuples: snapshot of known tuples; defaults to the API's history
        :return: an area never below the true cell's
        """
        tuples = tuples if tuples is not None else self.history.tuples()
        others = [s for s in tuples if s.id != t.id]
        return complex_area(topk_cell_from_locations(t, others, h, self._region(), self._disk(t)))

    def choose_h(self, t: SpatialTuple, rank: int, policy: VarianceReductionPolicy, lambda0: Optional[float] = None,
                 tuples: Optional[Sequence[SpatialTuple]] = None) -> int:
        """
        Picks the largest h in [2, k] whose volume bound stays within lambda0, else 1. The caller counts
        the tuple returned at `rank` only when rank <= h.

        :param t: the returned tuple
        :param rank: its 1-based rank in the answer
        :param policy: selection policy; its lambda0, when set, wins over the argument
        :param lambda0: threshold to use when the policy has none
        :param tuples: history snapshot taken before the answer was merged
        :return: the chosen h
        """
        if not 1 <= rank <= self.oracle.k:
            raise ValueError(f'rank must be in [1, {self.oracle.k}]; got {rank}')
        if not policy.enabled:
            return 1
        threshold = policy.lambda0 if policy.lambda0 is not None else lambda0
        if threshold is None:
            raise ValueError('choose_h needs lambda0 from the policy or the caller')
        tuples = tuples if tuples is not None else self.history.tuples()
        for h in range(self.oracle.k, 1, -1):
            if self.lambda_upper(t, h, tuples) <= threshold:
                return h
        return 1

    def mc_volume_ratio(self, est: CellEstimate, rng: np.random.Generator,
                        density: Optional[DensityGrid] = None) -> CellEstimate:
        """
        Counts trials until a point drawn from the upper region lands in the true cell. Points inside
        the certified lower region are hits without a query; every other trial costs one query. The
        expected count is mass(upper) / mass(true cell).

        :param est: a cell estimate with a nonempty upper region
        :param rng: random stream of the current sample
        :param density: draw trial points by this density instead of uniformly
        :return: the estimate with `mc_trials` set and `volume` = area(upper) / trials
        """
        if est.upper.is_empty:
            raise ValueError(f'Cell of {est.owner.id} has an empty upper region')
        tally = QueryLedger()
        hull = _shapely_cell(est.lower)
        trials = 0
        while True:
            trials += 1
            x = density.sample_complex(est.upper, rng) if density is not None else sample_complex(est.upper, rng)
            if hull is not None and hull.distance(shapely.geometry.Point(x.as_tuple())) <= TAU_GEOM:
                break
            rank = self._query(x, QueryPhase.MC_TRIAL, tally).rank_of(est.owner.id)
            if rank is not None and rank <= est.h:
                break
        return replace(est, mc_trials=trials, volume=complex_area(est.upper) / trials,
                       ledger_delta=est.ledger_delta + tally.snapshot())

    def lower_bound_region(self, t: SpatialTuple, certified: Sequence[Point2], q: Point2,
                           upper: Optional[CellComplex] = None) -> bool:
        """
        Decides, without querying, whether q is certainly inside the tuple's cell: the circle around q
        through t must be covered by the circles around certified points through t. When the upper region
        is given q must also lie in it, which is what makes the test sound for h > 1.

        :param t: the owner tuple
        :param certified: points whose queries certified the owner
        :param q: candidate point
        :param upper: optional upper region of the cell
        :return: True only if q is inside the true cell
        """
        if upper is not None and not complex_contains(upper, q):
            return False
        if not certified:
            return False
        radius = q.distance_to(t.loc)
        if radius <= TAU_GEOM:
            return True
        cover = [Circle(v, v.distance_to(t.loc)) for v in certified]
        return circle_union_covers(Circle(q, radius), cover, anchor=t.loc) == Coverage.COVERED

    def _check_h(self, h: int):
        if not 1 <= h <= self.oracle.k:
            raise ValueError(f'h must be in [1, {self.oracle.k}]; got {h}')

    def _disk(self, t: SpatialTuple) -> Optional[Circle]:
        return Circle(t.loc, self.oracle.max_radius) if self.oracle.max_radius is not None else None

    def _halfwidth(self, t: SpatialTuple, known: Iterable[SpatialTuple], options: LrCellOptions) -> float:
        if options.fast_init_halfwidth is not None:
            return options.fast_init_halfwidth
        nearest = min((s.loc.distance_to(t.loc) for s in known), default=0.0)
        if nearest > TAU_GEOM:
            return 2 * nearest
        return DEFAULT_HALFWIDTH_FRACTION * self._region().width()

    def _certifies(self, answer: QueryAnswer, t: SpatialTuple, v: Point2) -> bool:
        # every tuple closer to v than t was returned
        needed = v.distance_to(t.loc)
        if len(answer) >= self.oracle.k:
            covered = max(entry.loc.distance_to(v) for entry in answer.entries)
        elif self.oracle.max_radius is not None:
            covered = self.oracle.max_radius
        else:
            covered = math.inf
        return covered >= needed - TAU_GEOM * max(1.0, needed)

    def _pending_points(self, t: SpatialTuple, upper: CellComplex, certified: List[Point2],
                        options: LrCellOptions) -> List[Point2]:
        rings = boundary_rings(upper)
        if upper.disk is None:
            points = [v for ring in rings for v in ring]
        else:
            points = self._disk_test_points(upper, rings, options.arc_samples)
        pending = []
        for p in points:
            if any(p.distance_to(c) <= CERTIFIED_TOLERANCE for c in certified + pending):
                continue
            pending.append(p)
        pending.sort(key=lambda p: -p.distance_to(t.loc))
        return pending

    @staticmethod
    def _disk_test_points(upper: CellComplex, rings: List[List[Point2]], arc_samples: int) -> List[Point2]:
        # boundary vertices inside the disk, boundary crossings with the circle and samples along the arc
        disk = upper.disk
        points = [v for ring in rings for v in ring if disk.contains(v)]
        for ring in rings:
            for a, b in zip(ring, ring[1:] + ring[:1]):
                points.extend(segment_circle_crossings(a, b, disk))
        for j in range(arc_samples):
            angle = 2 * math.pi * j / arc_samples
            p = Point2(disk.center.x + disk.radius * math.cos(angle), disk.center.y + disk.radius * math.sin(angle))
            if any(contains(face, p) for face in upper.faces):
                points.append(p)
        return points

    @staticmethod
    def _close_enough(t: SpatialTuple, upper: CellComplex, certified: List[Point2], gamma: float) -> bool:
        hull = _shapely_cell(_hull_cell(t, certified))
        if hull is None:
            return False
        lower_area = hull.intersection(complex_to_shapely(upper)).area
        return lower_area > 0.0 and complex_area(upper) <= (1 + gamma) * lower_area

    @staticmethod
    def _absorb(tuples: Iterable[SpatialTuple], t: SpatialTuple, known: Dict[str, SpatialTuple],
                history: History) -> int:
        tuples = list(tuples)
        history.merge(tuples)
        added = 0
        for s in tuples:
            if s.id != t.id and s.id not in known:
                known[s.id] = s
                added += 1
        return added


def _encloses(t: SpatialTuple, tuples: Sequence[SpatialTuple]) -> bool:
    if len(tuples) < 3:
        return False
    hull = shapely.geometry.MultiPoint([s.loc.as_tuple() for s in tuples]).convex_hull
    return hull.contains(shapely.geometry.Point(t.loc.as_tuple()))


def _hull_cell(t: SpatialTuple, certified: Sequence[Point2]) -> Optional[ConvexCell]:
    """
    Convex hull of the owner and the certified points as a ConvexCell, or None when it has no area.
    """
    if len(certified) < 2:
        return None
    hull = shapely.geometry.MultiPoint([t.loc.as_tuple()] + [p.as_tuple() for p in certified]).convex_hull
    if hull.geom_type != 'Polygon' or hull.area <= TAU_GEOM * TAU_GEOM:
        return None
    ring = [Point2(x, y) for x, y in list(hull.exterior.coords)[:-1]]
    inside = Point2(hull.centroid.x, hull.centroid.y)
    edges = [HalfPlane.through(a, b, inside) for a, b in zip(ring, ring[1:] + ring[:1]) if a.distance_to(b) > TAU_GEOM]
    return clip_all(ConvexCell.from_box(*hull.bounds), edges)


def _shapely_cell(cell: Optional[ConvexCell]):
    if cell is None or cell.is_empty:
        return None
    return shapely.geometry.Polygon([v.as_tuple() for v in cell.vertices])
