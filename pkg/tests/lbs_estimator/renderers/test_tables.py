import math

from lbs_estimator.api.provider import LbsApiProvider
from lbs_estimator.client.config import OracleConfig
from lbs_estimator.client.dataset import Dataset
from lbs_estimator.client.ledger import LedgerSnapshot, QueryPhase
from lbs_estimator.client.raw import KnnOracle
from lbs_estimator.renderers.table import BENCHMARK_COLUMNS, BenchmarkTables, EstimateTables, LocalizationTables
from lbs_estimator.types.cells import LnrCellResult, Localization, LrCellOptions
from lbs_estimator.types.common import AggregateKind, AggregateSpec, SpatialTuple
from lbs_estimator.types.estimates import EstimatorOptions
from lbs_estimator.types.geometry import CellComplex, ConvexCell, Point2

BOX = (0.0, 0.0, 1.0, 1.0)


def test_estimate_tables():
    dataset = Dataset([SpatialTuple('a', Point2(0.25, 0.5)), SpatialTuple('b', Point2(0.75, 0.5))], BOX)
    oracle = KnnOracle(dataset, OracleConfig.create(1))
    options = EstimatorOptions(max_samples=10, lr_options=LrCellOptions(monte_carlo=False))
    estimate = LbsApiProvider(oracle).estimator(AggregateSpec(AggregateKind.COUNT), options).run_estimation()
    tables = EstimateTables(estimate)

    # both cells are half of the region so every sample says 2
    summary_df = tables.to_summary_data_frame()
    assert len(summary_df) == 1
    assert math.isclose(summary_df.iloc[0]['value'], 2.0)
    assert math.isclose(summary_df.iloc[0]['stdError'], 0.0, abs_tol=1e-12)
    assert summary_df.iloc[0]['samples'] == 10
    assert not summary_df.iloc[0]['biased']

    ledger_df = tables.to_ledger_data_frame()
    assert ledger_df.loc['issued'].queries == oracle.ledger.issued
    assert ledger_df.loc['sample'].queries == 10

    samples_df = tables.to_samples_data_frame()
    assert len(samples_df) == 10
    assert samples_df['queries'].sum() == oracle.ledger.issued

    h_df = tables.to_h_data_frame()
    assert list(h_df['h']) == [1]
    assert h_df['tuples'].sum() == 10


def test_benchmark_tables(tmp_path):
    row = {'variant': 'LR', 'sampler': 'uniform', 'n': 100, 'k': 1, 'queries': 1200, 'queriesPerCell': 12.0,
           'relativeError': 0.05, 'runs': 3}
    path = str(tmp_path / 'bench.csv')
    BenchmarkTables([row]).to_csv(path)
    BenchmarkTables([dict(row, k=2)]).to_csv(path)

    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[0] == ','.join(BENCHMARK_COLUMNS)
    assert len(lines) == 3

    BenchmarkTables([row]).to_csv(path, append=False)
    with open(path) as f:
        assert len(f.read().splitlines()) == 2


def test_localization_tables():
    cell = LnrCellResult(owner='a', h=1, polygon=CellComplex('a', (ConvexCell.from_box(*BOX),)), epsilon=1e-3)
    results = [
        Localization('a', Point2(0.3, 0.4), cell, LedgerSnapshot(7, {QueryPhase.BINARY_SEARCH: 7}), True),
        Localization('b', Point2(0.5, 0.5), cell)
    ]
    tables = LocalizationTables(results, {'a': Point2(0.3, 0.5)})

    error_df = tables.to_error_data_frame()
    assert list(error_df['tupleId']) == ['a', 'b']
    assert math.isclose(error_df.iloc[0]['error'], 0.1)
    assert math.isnan(error_df.iloc[1]['error'])
    assert error_df.iloc[0]['queries'] == 7

    cdf_df = tables.to_cdf_data_frame()
    assert len(cdf_df) == 1
    assert cdf_df.iloc[0]['fraction'] == 1.0
