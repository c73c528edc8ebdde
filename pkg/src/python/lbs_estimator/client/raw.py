import logging
import threading

from typing import Dict, List, Optional, Tuple

import numpy as np

from bidict import bidict
from scipy.spatial import cKDTree

from lbs_estimator.client.config import OracleConfig
from lbs_estimator.client.dataset import Dataset
from lbs_estimator.client.ledger import QueryLedger, QueryPhase
from lbs_estimator.geometry.arrangement import topk_cell_from_locations
from lbs_estimator.geometry.polygons import contains
from lbs_estimator.types.common import (AggregateKind, AggregateSpec, AttributeCondition, LbsMode, LocatedEntry,
                                        QueryAnswer, RankedEntry, SpatialTuple)
from lbs_estimator.types.geometry import CellComplex, Circle, ConvexCell, Point2

logger = logging.getLogger(__name__)

TIE_DIGITS = 12
"""
Distances equal after rounding to this many digits count as ties and are ordered by ascending id
"""


class OutOfRegionError(ValueError):
    """
    Error raised when a query location lies outside the service's bounding region.
    """
    def __init__(self, q: Point2, box: Tuple[float, float, float, float]):
        super().__init__(f'Query location ({q.x}, {q.y}) lies outside the bounding region {box}')


class UnknownTupleError(ValueError):
    """
    Error raised by ground-truth lookups for an id that is not in the dataset.
    """
    def __init__(self, tuple_id: str):
        super().__init__(f'Unknown tuple: {tuple_id}')


class SampleCapExceededError(Exception):
    """
    Error raised by a capped oracle view once the per-sample query cap is reached.
    """
    def __init__(self, cap: int):
        super().__init__(f'Per-sample cap of {cap} queries reached')
        self.cap = cap


class _Subset:
    # tuples passing one pass-through condition, with their own spatial index
    def __init__(self, rows: np.ndarray, locations: np.ndarray):
        self.rows = rows
        self.locations = locations[rows] if len(rows) else np.zeros((0, 2))
        self.tree = cKDTree(self.locations) if len(rows) else None


class KnnOracle:
    """
    Simulated location based service over an in-memory dataset: answers top-k nearest neighbor queries
    with LR or LNR semantics, honors the max-radius limit and pass-through attribute filters, and charges
    every query to a ledger. Ground-truth methods give tests full knowledge without touching the ledger.
    """
    def __init__(self, dataset: Dataset, config: OracleConfig, brute_force: bool = False,
                 ledger: Optional[QueryLedger] = None):
        """
        :param dataset: the hidden database
        :param config: interface limits (k, mode, max radius, budget, optional region override)
        :param brute_force: rank by a full scan instead of the k-d tree; kept as a correctness oracle
        :param ledger: optional shared ledger; by default a new one with the configured budget
        """
        self.dataset = dataset
        self.config = config
        self.brute_force = brute_force
        self.ledger = ledger if ledger is not None else QueryLedger(config.budget)
        self.box = config.region if config.region is not None else dataset.box
        self.region = ConvexCell.from_box(*self.box)

        self.row_ids = bidict({t.id: row for row, t in enumerate(dataset.tuples)})
        self._locations = dataset.locations()
        order = sorted(range(len(dataset.tuples)), key=lambda row: dataset.tuples[row].id)
        self._id_rank = np.empty(len(order), dtype=int)
        self._id_rank[order] = np.arange(len(order))

        self._subsets: Dict[Optional[AttributeCondition], _Subset] = {}
        self._lock = threading.Lock()

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def mode(self) -> LbsMode:
        return self.config.mode

    @property
    def max_radius(self) -> Optional[float]:
        return self.config.max_radius

    def knn_query(self, q: Point2, condition: Optional[AttributeCondition] = None,
                  phase: QueryPhase = QueryPhase.SAMPLE) -> QueryAnswer:
        """
        Issues one kNN query. The pass-through condition is applied before ranking, the max-radius cutoff
        after it, and the query is charged to the ledger before anything is computed.

        :param q: query location inside the bounding region
        :param condition: optional pass-through attribute filter
        :param phase: what the query is spent on, for the ledger breakdown
        :return: at most k entries nearest first; entries carry locations only in LR mode
        """
        if not contains(self.region, q):
            raise OutOfRegionError(q, self.box)
        if condition is not None and not condition.pass_through:
            raise ValueError(f'Condition on {condition.attr} is a post-filter and cannot be passed to the service')
        self.ledger.charge(phase)

        rows, distances = self._rank(q, condition)
        truncated = False
        if self.max_radius is not None:
            keep = distances <= self.max_radius
            truncated = not bool(np.all(keep))
            rows = rows[keep]
        return QueryAnswer(q, tuple(self._entry(int(row)) for row in rows), truncated)

    def ground_truth_tuple(self, t_id: str) -> SpatialTuple:
        if t_id not in self.row_ids:
            raise UnknownTupleError(t_id)
        return self.dataset.tuples[self.row_ids[t_id]]

    def ground_truth_tuples(self, condition: Optional[AttributeCondition] = None) -> List[SpatialTuple]:
        return [self.dataset.tuples[int(row)] for row in self._subset(condition).rows]

    def ground_truth_cell(self, t_id: str, k: Optional[int] = None,
                          condition: Optional[AttributeCondition] = None) -> CellComplex:
        """
        Full-knowledge top-k cell of a tuple among the tuples passing the condition, clipped to the
        max-radius disk around it when the service has one. Never touches the ledger.

        :param t_id: id of the owner tuple
        :param k: rank limit; defaults to the service's k
        :param condition: optional pass-through filter defining the competing tuples
        :return: the top-k cell
        """
        t = self.ground_truth_tuple(t_id)
        others = [s for s in self.ground_truth_tuples(condition) if s.id != t_id]
        disk = Circle(t.loc, self.max_radius) if self.max_radius is not None else None
        return topk_cell_from_locations(t, others, k if k is not None else self.k, self.region, disk)

    def ground_truth_aggregate(self, agg: AggregateSpec) -> float:
        """
        Exact full-scan value of an aggregate; AVG over an empty qualifying set is NaN.
        """
        total, count = 0.0, 0
        for t in self.dataset.tuples:
            if agg.qualifies(t.id, t.attrs, t.loc):
                total += agg.measure(t.id, t.attrs)
                count += 1
        if agg.kind == AggregateKind.COUNT:
            return float(count)
        if agg.kind == AggregateKind.SUM:
            return total
        return total / count if count else float('nan')

    def _entry(self, row: int) -> RankedEntry:
        t = self.dataset.tuples[row]
        if self.mode == LbsMode.LR:
            return LocatedEntry(t.id, t.attrs, t.loc)
        return RankedEntry(t.id, t.attrs)

    def _rank(self, q: Point2, condition: Optional[AttributeCondition]) -> Tuple[np.ndarray, np.ndarray]:
        subset = self._subset(condition)
        n = len(subset.rows)
        if n == 0:
            return np.zeros(0, dtype=int), np.zeros(0)
        point = np.array([q.x, q.y])
        if self.brute_force:
            candidates = np.arange(n)
        else:
            nearest, _ = subset.tree.query(point, k=min(self.k, n))
            kth = float(np.max(nearest))
            # everything tied with the k-th distance competes for the last slots
            radius = kth + max(1.0, kth) * 10 ** -TIE_DIGITS
            candidates = np.array(sorted(subset.tree.query_ball_point(point, radius)), dtype=int)
        distances = np.hypot(subset.locations[candidates, 0] - q.x, subset.locations[candidates, 1] - q.y)
        rows = subset.rows[candidates]
        order = np.lexsort((self._id_rank[rows], np.round(distances, TIE_DIGITS)))[:self.k]
        return rows[order], distances[order]

    def _subset(self, condition: Optional[AttributeCondition]) -> _Subset:
        with self._lock:
            subset = self._subsets.get(condition)
            if subset is None:
                if condition is None:
                    rows = np.arange(len(self.dataset.tuples))
                else:
                    rows = np.array([row for row, t in enumerate(self.dataset.tuples)
                                     if condition.evaluate(t.attrs, t.id)], dtype=int)
                    logger.debug(f'{len(rows)} of {len(self.dataset)} tuples pass {condition.attr} filter')
                subset = _Subset(rows, self._locations)
                self._subsets[condition] = subset
            return subset


class CappedOracle:
    """
    View of an oracle that allows at most `cap` queries; the query that would exceed the cap raises
    SampleCapExceededError without being issued.
    """
    def __init__(self, oracle: KnnOracle, cap: int):
        if cap < 1:
            raise ValueError(f'cap must be >= 1; got {cap}')
        self.oracle = oracle
        self.cap = cap
        self.used = 0

    @property
    def k(self) -> int:
        return self.oracle.k

    @property
    def mode(self) -> LbsMode:
        return self.oracle.mode

    @property
    def max_radius(self) -> Optional[float]:
        return self.oracle.max_radius

    @property
    def region(self) -> ConvexCell:
        return self.oracle.region

    @property
    def ledger(self) -> QueryLedger:
        return self.oracle.ledger

    def knn_query(self, q: Point2, condition: Optional[AttributeCondition] = None,
                  phase: QueryPhase = QueryPhase.SAMPLE) -> QueryAnswer:
        if self.used >= self.cap:
            raise SampleCapExceededError(self.cap)
        answer = self.oracle.knn_query(q, condition, phase)
        self.used += 1
        return answer
