# flake8: noqa

from lbs_estimator.client.config import OracleConfig, load_oracle_config
from lbs_estimator.client.dataset import Dataset, load_dataset
from lbs_estimator.client.ledger import BudgetExhaustedError, LedgerSnapshot, QueryLedger, QueryPhase
from lbs_estimator.client.raw import (CappedOracle, KnnOracle, OutOfRegionError, SampleCapExceededError,
                                      UnknownTupleError)
