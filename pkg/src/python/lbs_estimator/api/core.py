from abc import ABC
from typing import Optional, Union

from lbs_estimator.client.ledger import QueryLedger, QueryPhase
from lbs_estimator.client.raw import CappedOracle, KnnOracle
from lbs_estimator.types.common import AttributeCondition, QueryAnswer
from lbs_estimator.types.geometry import ConvexCell, Point2

Oracle = Union[KnnOracle, CappedOracle]


class CellApi(ABC):
    """
    Higher-level wrapper around a kNN oracle for one family of cell computations. Subclasses add typed
    operations for location-returned or rank-only services; all of them query through `_query` so that
    every call is charged both to the oracle's ledger and to the caller's per-cell tally.
    """
    def __init__(self, oracle: Oracle, condition: Optional[AttributeCondition] = None):
        """
        :param oracle: the service to query, possibly a capped view
        :param condition: optional pass-through filter applied to every query
        """
        self.oracle = oracle
        self.condition = condition

    def _query(self, q: Point2, phase: QueryPhase, tally: Optional[QueryLedger] = None) -> QueryAnswer:
        """
        Helper method for derived classes that issues one query with the API's pass-through condition.

        :param q: query location
        :param phase: what the query is spent on
        :param tally: optional local ledger counting the queries of the current computation
        :return: the ranked answer
        """
        answer = self.oracle.knn_query(q, self.condition, phase)
        if tally is not None:
            tally.charge(phase)
        return answer

    def _region(self) -> ConvexCell:
        return self.oracle.region

    def _with_oracle(self, oracle: Oracle):
        """
        Gets a copy of this API bound to another oracle view, e.g. a per-sample capped one.
        """
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.oracle = oracle
        return clone
