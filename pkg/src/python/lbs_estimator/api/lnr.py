import logging
import math

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from lbs_estimator.api.core import CellApi, Oracle
from lbs_estimator.client.ledger import BudgetExhaustedError, QueryLedger, QueryPhase
from lbs_estimator.geometry.arrangement import boundary_vertices, complex_area, topk_cell_from_halfplanes
from lbs_estimator.geometry.polygons import centroid, clip_all, contains, ray_exit
from lbs_estimator.types.cells import (BinarySearchParams, EdgeSource, EstimatedEdge, LnrCellResult,
                                       Localization)
from lbs_estimator.types.common import AttributeCondition, LocationCondition, QueryAnswer
from lbs_estimator.types.geometry import TAU_GEOM, CellComplex, ConvexCell, HalfPlane, Point2

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_FRACTION = 1e-3
"""
Default edge error target as a fraction of the region width
"""

VERTEX_TOLERANCE = 1e-8
NEAR_PARALLEL_ANGLE = 1e-4
PROBE_EDGE_FRACTION = 0.25
PROBE_EPSILON_MULTIPLE = 100
RIVAL_ATTEMPTS = 6
RIVAL_CHECK_MULTIPLE = 4


class NoEdgeError(Exception):
    """
    Error raised when a binary search cannot start: the search predicate does not hold at the inside end,
    or already holds at the outside end.
    """
    def __init__(self, t_id: str, q: Point2):
        super().__init__(f'No edge of {t_id} to search for from ({q.x}, {q.y})')


class NearParallelRaysError(Exception):
    """
    Error raised when two position rays are too close to parallel to intersect reliably.
    """
    def __init__(self, angle: float):
        super().__init__(f'Position rays are near-parallel: {angle} rad < {NEAR_PARALLEL_ANGLE} rad')


class BiasDomainError(ValueError):
    """
    Error raised when the edge error is not below every nearest-neighbor distance.
    """
    def __init__(self, epsilon: float, min_distance: float):
        super().__init__(f'epsilon {epsilon} must be below the minimum nearest-neighbor distance {min_distance}')


class _ProbeCache:
    """
    Answers already obtained during one computation, keyed by query location.
    """
    def __init__(self, api: CellApi, tally: QueryLedger):
        self.api = api
        self.tally = tally
        self.answers: Dict[Point2, QueryAnswer] = {}

    def answer(self, q: Point2, phase: QueryPhase = QueryPhase.BINARY_SEARCH) -> QueryAnswer:
        if q not in self.answers:
            self.answers[q] = self.api._query(q, phase, self.tally)
        return self.answers[q]

    def seed(self, q: Point2, answer: QueryAnswer):
        self.answers.setdefault(q, answer)


Predicate = Callable[[QueryAnswer], Optional[bool]]


def in_top(t_id: str, h: int) -> Predicate:
    def predicate(answer: QueryAnswer) -> Optional[bool]:
        rank = answer.rank_of(t_id)
        return rank is not None and rank <= h
    return predicate


def ranked_before(t_id: str, s_id: str) -> Predicate:
    """
    Predicate "t is ranked before s", a missing entry ranking last; undefined when neither was returned.
    """
    def predicate(answer: QueryAnswer) -> Optional[bool]:
        t_rank, s_rank = answer.rank_of(t_id), answer.rank_of(s_id)
        if t_rank is None and s_rank is None:
            return None
        return (t_rank if t_rank is not None else math.inf) < (s_rank if s_rank is not None else math.inf)
    return predicate


class LnrCellApi(CellApi):
    """
    Cell computations for rank-only services, which return ids without locations. Cell edges are found by
    binary searches between points where the owner is and is not returned; the resulting cells are
    subregions of the true cells up to a chosen maximum edge error, and the owner's location can be
    recovered from the angles at two cell vertices.
    """
    def __init__(self, oracle: Oracle, condition: Optional[AttributeCondition] = None,
                 params: Optional[BinarySearchParams] = None):
        super().__init__(oracle, condition)
        if params is None:
            region = oracle.region
            params = BinarySearchParams.from_epsilon(DEFAULT_EPSILON_FRACTION * region.width(), region)
        self.params = params

    def binary_search_edge(self, t_id: str, c1: Point2, c2: Point2, params: Optional[BinarySearchParams] = None,
                           h: int = 1, rival: Optional[str] = None, c2_outside: bool = False,
                           probes: Optional[_ProbeCache] = None) -> EstimatedEdge:
        """
        Finds the edge crossed when moving from c1 towards c2. By default the search runs to where the ray
        leaves the region and looks for the boundary of the owner's top-h cell; with a rival it looks for
        the bisector between the owner and the rival instead. The final straddling segment and one of two
        slightly rotated auxiliary segments give two points on the edge; when neither auxiliary search sees
        the same neighbor the edge falls back to the perpendicular bisector of the main segment.

        :param t_id: the owner
        :param c1: point where the predicate holds
        :param c2: point giving the search direction
        :param params: search resolution; defaults to the API's
        :param h: rank limit of the cell predicate
        :param rival: search the bisector between the owner and this tuple
        :param c2_outside: search the segment c1..c2 only; the predicate must fail at c2
        :param probes: answers of the surrounding computation, reused and extended
        :return: the edge, oriented to contain c1
        """
        params = params if params is not None else self.params
        probes = probes if probes is not None else _ProbeCache(self, QueryLedger())
        predicate = ranked_before(t_id, rival) if rival is not None else in_top(t_id, h)
        region = self._region()
        issued = probes.tally.snapshot().issued

        if probes.answer(c1).rank_of(t_id) is None or predicate(probes.answer(c1)) is not True:
            raise NoEdgeError(t_id, c1)
        direction = (c2.x - c1.x, c2.y - c1.y)
        if math.hypot(*direction) <= TAU_GEOM:
            raise ValueError(f'Binary search endpoints coincide at ({c1.x}, {c1.y})')

        if c2_outside:
            cb, side = c2, -1
        else:
            cb, side = ray_exit(region, c1, direction)
        if predicate(probes.answer(cb)) is True:
            if c2_outside:
                raise NoEdgeError(t_id, cb)
            logger.debug(f'edge search of {t_id} reached the region boundary')
            return EstimatedEdge(region.halfplanes[side], (cb, cb), EdgeSource.REGION,
                                 queries=probes.tally.snapshot().issued - issued)

        c3, c4 = self._bisect(c1, cb, predicate, params.delta, probes)
        neighbor = self._neighbor(t_id, h, rival, probes.answer(c3), probes.answer(c4))

        r = c1.distance_to(c4)
        theta = math.asin(min(1.0, params.delta_prime / r)) if r > TAU_GEOM else 0.0
        base = math.atan2(c4.y - c1.y, c4.x - c1.x)
        mid = c3.midpoint(c4)
        for sign in (1.0, -1.0):
            unit = (math.cos(base + sign * theta), math.sin(base + sign * theta))
            aux_end, _ = ray_exit(region, c1, unit)
            if c2_outside and c1.distance_to(aux_end) > c1.distance_to(cb):
                # a segment search stays as short as its main segment
                aux_end = c1.offset(unit[0] * c1.distance_to(cb), unit[1] * c1.distance_to(cb))
            if aux_end.distance_to(c1) <= TAU_GEOM or predicate(probes.answer(aux_end)) is not False:
                continue
            c5, c6 = self._bisect(c1, aux_end, predicate, params.delta, probes)
            if self._neighbor(t_id, h, rival, probes.answer(c5), probes.answer(c6)) != neighbor:
                continue
            aux_mid = c5.midpoint(c6)
            if aux_mid.distance_to(mid) <= TAU_GEOM:
                continue
            line = HalfPlane.through(mid, aux_mid, c1)
            return EstimatedEdge(line, (c3, c4), EdgeSource.MIDPOINTS, neighbor, (c5, c6),
                                 probes.tally.snapshot().issued - issued)

        logger.warning(f'both auxiliary searches for an edge of {t_id} failed; using the segment bisector')
        length = c3.distance_to(c4)
        normal = ((c4.x - c3.x) / length, (c4.y - c3.y) / length)
        line = HalfPlane(normal, normal[0] * mid.x + normal[1] * mid.y)
        return EstimatedEdge(line, (c3, c4), EdgeSource.SEGMENT_BISECTOR, neighbor,
                             queries=probes.tally.snapshot().issued - issued)

    def compute_cell_lnr(self, seed: Point2, params: Optional[BinarySearchParams] = None, h: int = 1,
                         t_id: Optional[str] = None, seed_answer: Optional[QueryAnswer] = None) -> LnrCellResult:
        """
        Estimates the top-h cell of the tuple returned at the seed: four axis-aligned searches give a first
        polygon, then each polygon vertex is queried and must return only the owner or known neighbors;
        a vertex returning a stranger triggers a search along the segment from the seed to it. For h > 1
        the convex polygon is then grown by `repair_concavity`.

        :param seed: a query location where the owner is within the first h entries
        :param params: search resolution; defaults to the API's
        :param h: which top-h cell, 1 <= h <= k
        :param t_id: the owner; defaults to the first entry at the seed
        :param seed_answer: answer already obtained at the seed, to avoid querying it again
        :return: the estimated cell
        """
        params = params if params is not None else self.params
        if not 1 <= h <= self.oracle.k:
            raise ValueError(f'h must be in [1, {self.oracle.k}]; got {h}')
        probes = _ProbeCache(self, QueryLedger())
        if seed_answer is not None:
            probes.seed(seed, seed_answer)

        exhausted = False
        edges: List[EstimatedEdge] = []
        known: Set[str] = set()
        converged = False
        try:
            answer = probes.answer(seed, QueryPhase.INIT)
            if t_id is None:
                if not answer.entries:
                    raise ValueError(f'Empty answer at seed ({seed.x}, {seed.y})')
                t_id = answer.entries[0].id
            converged = self._discover_edges(t_id, seed, params, h, probes, edges, known)
        except BudgetExhaustedError:
            exhausted = True
            if t_id is None:
                raise

        polygon, labels = self._assemble(edges)
        result = LnrCellResult(owner=t_id, h=h, polygon=CellComplex(t_id, (polygon,)), epsilon=self._epsilon(params),
                               edges=tuple(edges), label_edges=labels, neighbors=frozenset(known), seed=seed,
                               ledger_delta=probes.tally.snapshot(), converged=converged, exhausted=exhausted)
        if h > 1 and not exhausted:
            result = self.repair_concavity(result, params, probes)
        return result

    def repair_concavity(self, cell: LnrCellResult, params: Optional[BinarySearchParams] = None,
                         probes: Optional[_ProbeCache] = None) -> LnrCellResult:
        """
        Grows a naive convex top-h polygon into the arrangement of estimated bisectors between the owner
        and every tuple seen ranked before it. Each bisector is searched between two earlier probes that
        disagree on the order of the two tuples and kept only if it separates every answer seen so far,
        plus two check pairs near the ends of the bisector, up to a few edge errors; tuples always ranked
        before the owner lower the effective h instead. Vertices of the arrangement are then queried, and
        any new tuple they reveal is added and the arrangement rebuilt, until no vertex reveals anything
        new. If some bisector cannot be found or is contradicted by a later answer, the naive polygon is
        kept.

        :param cell: the naive polygon from `compute_cell_lnr`
        :param params: search resolution; defaults to the API's
        :param probes: answers of the surrounding computation
        :return: the repaired cell
        """
        params = params if params is not None else self.params
        probes = probes if probes is not None else _ProbeCache(self, QueryLedger())
        if cell.seed is not None and cell.seed not in probes.answers:
            probes.answer(cell.seed)
        t_id, h = cell.owner, cell.h
        region = self._region()
        tolerance = RIVAL_CHECK_MULTIPLE * self._epsilon(params)

        bisectors: Dict[str, HalfPlane] = {}
        settled: Set[str] = set()
        always_closer: Set[str] = set()
        unresolved: Set[str] = set()
        edges = list(cell.edges)
        polygon = cell.polygon
        converged, exhausted = cell.converged, cell.exhausted
        try:
            for _ in range(params.max_edges):
                pending = sorted(self._ranked_before_owner(t_id, h, probes) - settled)
                if not pending:
                    converged = True
                    break
                for s in pending:
                    settled.add(s)
                    edge = self._rival_edge(t_id, s, params, h, probes)
                    if edge is not None:
                        bisectors[s] = edge.line
                        edges.append(edge)
                    elif self._always_before(t_id, s, probes):
                        always_closer.add(s)
                    else:
                        unresolved.add(s)
                if unresolved:
                    break
                effective_h = max(1, h - len(always_closer))
                polygon = topk_cell_from_halfplanes(t_id, list(bisectors.values()), effective_h, region)
                for v in boundary_vertices(polygon):
                    probes.answer(v, QueryPhase.VERTEX_TEST)
                unresolved.update(s for s, line in bisectors.items()
                                  if not _separates(t_id, s, line, probes.answers.items(), tolerance))
                if unresolved:
                    break
            else:
                converged = False
        except BudgetExhaustedError:
            exhausted = True

        if unresolved:
            logger.warning(f'no consistent bisector of {t_id} with {", ".join(sorted(unresolved))}; '
                           f'keeping the naive top-{h} polygon')
            polygon, converged = cell.polygon, False
        elif complex_area(polygon) < complex_area(cell.polygon):
            logger.warning(f'repaired top-{h} cell of {t_id} is smaller than the naive polygon; keeping the naive one')
            polygon = cell.polygon
        neighbors = frozenset(cell.neighbors | set(bisectors))
        return LnrCellResult(owner=t_id, h=h, polygon=polygon, epsilon=cell.epsilon, edges=tuple(edges),
                             label_edges=(), neighbors=neighbors, seed=cell.seed,
                             ledger_delta=probes.tally.snapshot(), converged=converged, exhausted=exhausted)

    def infer_position(self, cell: LnrCellResult, params: Optional[BinarySearchParams] = None,
                       tally: Optional[QueryLedger] = None) -> Point2:
        """
        Recovers the owner's location from its top-1 cell. At a vertex where the owner's cell meets two
        neighbors' cells, the owner is fixed by the composition of the reflections across the three edges
        meeting there, so it lies on that composition's axis. The edge between the two neighbors costs one
        binary search between probes on the extensions of the owner's edges. Two vertices give two rays and
        the location is their intersection.

        :param cell: a top-1 cell estimate with at least two vertices between bisector edges
        :param params: search resolution; defaults to the API's
        :param tally: optional local ledger of the surrounding computation
        :return: the inferred location
        """
        params = params if params is not None else self.params
        if cell.h != 1:
            raise ValueError(f'Position inference needs a top-1 cell; got h={cell.h}')
        probes = _ProbeCache(self, tally if tally is not None else QueryLedger())
        face = cell.polygon.faces[0]
        candidates = self._corner_candidates(cell, face)
        if len(candidates) < 2:
            raise ValueError(f'Cell of {cell.owner} has fewer than two vertices between bisector edges')

        inner = centroid(face)
        rays: List[Tuple[Point2, Tuple[float, float]]] = []
        for corner in _corner_order(candidates, face, inner):
            try:
                ray = self._corner_ray(cell, face, corner, params, probes)
            except NoEdgeError as e:
                logger.warning(f'skipping a vertex of {cell.owner}: {e}')
                continue
            for other in rays:
                try:
                    return _intersect_rays(other, ray)
                except NearParallelRaysError as e:
                    logger.warning(f'{e}; trying another vertex of {cell.owner}')
            rays.append(ray)
        if len(rays) < 2:
            raise ValueError(f'Cell of {cell.owner} has fewer than two usable vertices')
        raise NearParallelRaysError(max(_ray_angle(a, b) for a in rays for b in rays if a is not b))

    def localize(self, seed: Point2, params: Optional[BinarySearchParams] = None, t_id: Optional[str] = None,
                 condition: Optional[LocationCondition] = None) -> Localization:
        """
        Estimates the top-1 cell of the tuple at the seed and infers its location, optionally evaluating a
        location condition on the result.
        """
        params = params if params is not None else self.params
        cell = self.compute_cell_lnr(seed, params, 1, t_id)
        tally = QueryLedger()
        location = self.infer_position(cell, params, tally)
        satisfies = condition.evaluate_location(location) if condition is not None else None
        return Localization(cell.owner, location, cell, cell.ledger_delta + tally.snapshot(), satisfies)

    def localize_all(self, seeds: Iterable[Tuple[str, Point2]], params: Optional[BinarySearchParams] = None,
                     condition: Optional[LocationCondition] = None) -> List[Localization]:
        """
        Localizes a batch of tuples, each from a seed inside its cell. Tuples whose position cannot be
        inferred are logged and left out; budget exhaustion stops the batch.
        """
        results = []
        for t_id, seed in seeds:
            try:
                results.append(self.localize(seed, params, t_id, condition))
            except (NearParallelRaysError, NoEdgeError, ValueError) as e:
                logger.warning(f'could not localize {t_id}: {e}')
            except BudgetExhaustedError:
                logger.warning(f'query budget exhausted after localizing {len(results)} tuples')
                break
        return results

    def _discover_edges(self, t_id: str, seed: Point2, params: BinarySearchParams, h: int, probes: _ProbeCache,
                        edges: List[EstimatedEdge], known: Set[str]) -> bool:
        for dx, dy in ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)):
            edge = self.binary_search_edge(t_id, seed, seed.offset(dx, dy), params, h, probes=probes)
            self._record(edge, edges, known)

        epsilon = self._epsilon(params)
        passed: List[Point2] = []
        while len(edges) < params.max_edges:
            polygon, _ = self._assemble(edges)
            failed = None
            for v in sorted(polygon.vertices, key=lambda p: -p.distance_to(seed)):
                if any(v.distance_to(p) <= VERTEX_TOLERANCE for p in passed):
                    continue
                probe = self._vertex_probe(v, seed, epsilon, probes)
                top = probe.ids()[:h]
                if t_id in top:
                    known.update(s for s in top if s != t_id)
                # for h > 1 co-returned tuples are known at once, so the owner itself must be there
                if set(top) <= known | {t_id} and (h == 1 or t_id in top):
                    passed.append(v)
                    continue
                failed = v
                break
            if failed is None:
                return True
            edge = self.binary_search_edge(t_id, seed, failed, params, h, c2_outside=True, probes=probes)
            if edge.witnesses[0].distance_to(failed) <= epsilon or edge.line.contains(failed):
                passed.append(failed)
                if edge.neighbor_id is not None:
                    known.add(edge.neighbor_id)
                continue
            self._record(edge, edges, known)
        logger.warning(f'cell of {t_id} stopped at the cap of {params.max_edges} edges')
        return False

    def _vertex_probe(self, v: Point2, seed: Point2, epsilon: float, probes: _ProbeCache) -> QueryAnswer:
        answer = probes.answer(v, QueryPhase.VERTEX_TEST)
        if answer.entries or self.oracle.max_radius is None:
            return answer
        # nothing within the max radius: look again just inside
        length = v.distance_to(seed)
        if length <= epsilon:
            return answer
        pulled = Point2(v.x + (seed.x - v.x) * epsilon / length, v.y + (seed.y - v.y) * epsilon / length)
        return probes.answer(pulled, QueryPhase.VERTEX_TEST)

    def _assemble(self, edges: Sequence[EstimatedEdge]) -> Tuple[ConvexCell, Tuple[Optional[int], ...]]:
        region = self._region()
        line_edges = [i for i, edge in enumerate(edges) if edge.source != EdgeSource.REGION]
        polygon = clip_all(region, [edges[i].line for i in line_edges])
        labels = tuple([None] * len(region.halfplanes) + line_edges)
        return polygon, labels

    def _rival_edge(self, t_id: str, s_id: str, params: BinarySearchParams, h: int,
                    probes: _ProbeCache) -> Optional[EstimatedEdge]:
        predicate = ranked_before(t_id, s_id)
        inside, outside = [], []
        for q, answer in list(probes.answers.items()):
            value = predicate(answer)
            if value is True and answer.rank_of(t_id) is not None:
                inside.append(q)
            elif value is False:
                outside.append(q)
        if not inside or not outside:
            return None

        epsilon = self._epsilon(params)
        distances = cdist(np.array([q.as_tuple() for q in inside]), np.array([q.as_tuple() for q in outside]))
        # pairs closer than the edge error leave the bisector direction undetermined
        distances[distances <= max(epsilon, TAU_GEOM)] = np.inf
        nearest = distances.argmin(axis=1)
        separation = distances[np.arange(len(inside)), nearest]
        for i in np.argsort(separation, kind='stable')[:RIVAL_ATTEMPTS]:
            if not np.isfinite(separation[i]):
                break
            c1, c2 = inside[int(i)], outside[int(nearest[i])]
            try:
                edge = self.binary_search_edge(t_id, c1, c2, params, h, rival=s_id, c2_outside=True, probes=probes)
            except (NoEdgeError, ValueError) as e:
                logger.debug(f'bisector search of {t_id} and {s_id} failed: {e}')
                continue
            if self._confirm_rival_edge(t_id, s_id, edge, probes, RIVAL_CHECK_MULTIPLE * epsilon):
                return edge
            logger.debug(f'bisector of {t_id} and {s_id} from ({c1.x}, {c1.y}) contradicts earlier answers')
        return None

    def _confirm_rival_edge(self, t_id: str, s_id: str, edge: EstimatedEdge, probes: _ProbeCache,
                            tolerance: float) -> bool:
        """
        Checks an estimated bisector against every answer seen, after querying a pair of points on either
        side of it near both of its ends in the region.
        """
        region = self._region()
        line = edge.line
        anchor = edge.witnesses[0].midpoint(edge.witnesses[1])
        nx, ny = line.normal
        along = line.direction()
        for direction in (along, (-along[0], -along[1])):
            end, _ = ray_exit(region, anchor, direction)
            if anchor.distance_to(end) <= 2 * tolerance:
                continue
            p = _along(end, anchor, 2 * tolerance)
            for sign in (-1.0, 1.0):
                q = p.offset(sign * tolerance * nx, sign * tolerance * ny)
                if contains(region, q, 0.0):
                    probes.answer(q)
        return _separates(t_id, s_id, line, probes.answers.items(), tolerance)

    @staticmethod
    def _ranked_before_owner(t_id: str, h: int, probes: _ProbeCache) -> Set[str]:
        # among the first h entries; a missing owner ranks after all of them
        found = set()
        for answer in probes.answers.values():
            rank = answer.rank_of(t_id)
            found.update(answer.ids()[:min(h, rank - 1) if rank is not None else h])
        return found

    @staticmethod
    def _always_before(t_id: str, s_id: str, probes: _ProbeCache) -> bool:
        predicate = ranked_before(t_id, s_id)
        values = [predicate(answer) for answer in probes.answers.values()]
        return any(v is False for v in values) and not any(v is True for v in values)

    def _bisect(self, inside: Point2, outside: Point2, predicate: Predicate, delta: float,
                probes: _ProbeCache) -> Tuple[Point2, Point2]:
        while inside.distance_to(outside) > delta:
            mid = inside.midpoint(outside)
            if predicate(probes.answer(mid)) is True:
                inside = mid
            else:
                outside = mid
        return inside, outside

    @staticmethod
    def _neighbor(t_id: str, h: int, rival: Optional[str], at_inside: QueryAnswer,
                  at_outside: QueryAnswer) -> Optional[str]:
        if rival is not None:
            return rival
        if h == 1:
            return at_outside.entries[0].id if at_outside.entries else None
        before = set(at_inside.ids()[:h])
        return next((s for s in at_outside.ids()[:h] if s not in before and s != t_id), None)

    @staticmethod
    def _record(edge: EstimatedEdge, edges: List[EstimatedEdge], known: Set[str]):
        edges.append(edge)
        if edge.neighbor_id is not None:
            known.add(edge.neighbor_id)

    @staticmethod
    def _epsilon(params: BinarySearchParams) -> float:
        return params.epsilon if params.epsilon is not None else 2 * params.delta_prime

    @staticmethod
    def _corner_candidates(cell: LnrCellResult, face: ConvexCell) -> List[Tuple[int, int, int]]:
        """
        Gets (vertex index, incoming edge, outgoing edge) for vertices between two bisector edges with
        different known neighbors.
        """
        candidates = []
        n = len(face.vertices)
        for i in range(n):
            incoming = _edge_index(cell, face.edge_labels[i - 1])
            outgoing = _edge_index(cell, face.edge_labels[i])
            if incoming is None or outgoing is None:
                continue
            a, b = cell.edges[incoming].neighbor_id, cell.edges[outgoing].neighbor_id
            if a is not None and b is not None and a != b:
                candidates.append((i, incoming, outgoing))
        return candidates

    def _corner_ray(self, cell: LnrCellResult, face: ConvexCell, corner: Tuple[int, int, int],
                    params: BinarySearchParams, probes: _ProbeCache) -> Tuple[Point2, Tuple[float, float]]:
        i, incoming, outgoing = corner
        n = len(face.vertices)
        o, before, after = face.vertices[i], face.vertices[i - 1], face.vertices[(i + 1) % n]
        edge_a, edge_b = cell.edges[incoming], cell.edges[outgoing]
        t_a, t_b = edge_a.neighbor_id, edge_b.neighbor_id

        reach = min(PROBE_EDGE_FRACTION * min(o.distance_to(before), o.distance_to(after)),
                    PROBE_EPSILON_MULTIPLE * cell.epsilon)
        # past o, the owner's edge with one neighbor runs through the other neighbor's cell
        in_a = _along(o, after, -reach)
        in_b = _along(o, before, -reach)
        pairs = [(in_a, in_b), (edge_a.witnesses[1], edge_b.witnesses[1])]

        region = self._region()
        between = None
        for start, end in pairs:
            if not (contains(region, start) and contains(region, end)) or start.distance_to(end) <= TAU_GEOM:
                continue
            try:
                between = self.binary_search_edge(t_a, start, end, params, 1, c2_outside=True, probes=probes)
                break
            except NoEdgeError:
                continue
        if between is None or between.neighbor_id != t_b:
            raise NoEdgeError(t_a, o)

        phi = edge_a.line.angle() - between.line.angle() + edge_b.line.angle()
        direction = (math.cos(phi), math.sin(phi))
        # the owner lies inside both of its edges at o
        if _outward(direction, edge_a, edge_b) > _outward((-direction[0], -direction[1]), edge_a, edge_b):
            direction = (-direction[0], -direction[1])
        return o, direction


def _edge_index(cell: LnrCellResult, label: int) -> Optional[int]:
    if label >= len(cell.label_edges):
        return None
    return cell.label_edges[label]


def _along(o: Point2, towards: Point2, distance: float) -> Point2:
    length = o.distance_to(towards)
    return Point2(o.x + (towards.x - o.x) * distance / length, o.y + (towards.y - o.y) * distance / length)


def _separates(t_id: str, s_id: str, line: HalfPlane, answers: Iterable[Tuple[Point2, QueryAnswer]],
               tolerance: float) -> bool:
    # t ranked before s on the kept side, after it on the other, up to tolerance
    predicate = ranked_before(t_id, s_id)
    for q, answer in answers:
        value = predicate(answer)
        if value is None:
            continue
        distance = line.signed_distance(q)
        if (value and distance > tolerance) or (not value and distance < -tolerance):
            return False
    return True


def _outward(direction: Tuple[float, float], *edges: EstimatedEdge) -> float:
    return max(e.line.normal[0] * direction[0] + e.line.normal[1] * direction[1] for e in edges)


def _corner_order(candidates: List[Tuple[int, int, int]], face: ConvexCell,
                  inner: Point2) -> List[Tuple[int, int, int]]:
    """
    Orders candidate vertices so the first two are the pair whose directions towards the centroid are the
    furthest from parallel, followed by the rest in decreasing separation from the first. Rays are only known
    after searching, so the centroid directions stand in for them.
    """
    def heading(corner: Tuple[int, int, int]) -> float:
        o = face.vertices[corner[0]]
        return math.atan2(inner.y - o.y, inner.x - o.x)

    headings = [heading(c) for c in candidates]
    first, second = max(((i, j) for i in range(len(candidates)) for j in range(i + 1, len(candidates))),
                        key=lambda pair: abs(math.sin(headings[pair[0]] - headings[pair[1]])))
    rest = sorted((i for i in range(len(candidates)) if i not in (first, second)),
                  key=lambda i: -abs(math.sin(headings[i] - headings[first])))
    return [candidates[i] for i in [first, second] + rest]


def _ray_angle(first: Tuple[Point2, Tuple[float, float]], second: Tuple[Point2, Tuple[float, float]]) -> float:
    (_, (ux, uy)), (_, (vx, vy)) = first, second
    return abs(math.asin(max(-1.0, min(1.0, ux * vy - uy * vx))))


def _intersect_rays(first: Tuple[Point2, Tuple[float, float]],
                    second: Tuple[Point2, Tuple[float, float]]) -> Point2:
    (o1, (ux, uy)), (o2, (vx, vy)) = first, second
    cross = ux * vy - uy * vx
    if _ray_angle(first, second) < NEAR_PARALLEL_ANGLE:
        raise NearParallelRaysError(_ray_angle(first, second))
    s = ((o2.x - o1.x) * vy - (o2.y - o1.y) * vx) / cross
    return Point2(o1.x + s * ux, o1.y + s * uy)


def bias_bound(locations: Sequence[Point2], epsilon: float) -> float:
    """
    Bound on the COUNT bias caused by estimating rank-only cells with maximum edge error epsilon:
    the sum over tuples of |epsilon^2 - 2 d epsilon| / (d - epsilon)^2, d being the distance from the tuple to
    its nearest neighbor.

    :param locations: ground-truth tuple locations
    :param epsilon: maximum edge error, below every nearest-neighbor distance
    :return: the bound; 0 for fewer than two tuples
    """
    if epsilon < 0.0:
        raise ValueError(f'epsilon must be >= 0; got {epsilon}')
    if len(locations) < 2:
        return 0.0
    points = np.array([p.as_tuple() for p in locations])
    distances, _ = cKDTree(points).query(points, k=2)
    d = distances[:, 1]
    if epsilon >= d.min():
        raise BiasDomainError(epsilon, float(d.min()))
    return float(np.sum(np.abs(epsilon ** 2 - 2 * d * epsilon) / (d - epsilon) ** 2))
