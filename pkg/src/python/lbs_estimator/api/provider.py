from typing import Optional

from lbs_estimator.api.estimator import EstimatorApi
from lbs_estimator.api.lnr import LnrCellApi
from lbs_estimator.api.lr import LrCellApi
from lbs_estimator.client.raw import KnnOracle
from lbs_estimator.types.cells import BinarySearchParams, History, LrCellOptions
from lbs_estimator.types.common import AggregateSpec, AttributeCondition
from lbs_estimator.types.estimates import EstimatorOptions


class LbsApiProvider:
    """
    Simple entrypoint that gives you access to the cell and estimation API's over a single service, all
    sharing one history of answers.
    """
    def __init__(self, oracle: KnnOracle, condition: Optional[AttributeCondition] = None):
        """
        :param oracle: the service every API queries
        :param condition: optional pass-through filter for the cell API's
        """
        self.oracle = oracle
        self.condition = condition
        self.history = History()

    def lr(self, options: Optional[LrCellOptions] = None) -> LrCellApi:
        """
        Gets the exact cell computations for a location-returned service.
        """
        return LrCellApi(self.oracle, self.condition, options, self.history)

    def lnr(self, params: Optional[BinarySearchParams] = None) -> LnrCellApi:
        """
        Gets the edge-search cell computations and localization; usable with either kind of service.
        """
        return LnrCellApi(self.oracle, self.condition, params)

    def estimator(self, agg: AggregateSpec, options: Optional[EstimatorOptions] = None) -> EstimatorApi:
        """
        Gets an aggregate estimator; its pass-through condition comes from the aggregate itself.
        """
        return EstimatorApi(self.oracle, agg, options, self.history)
