import math

import numpy as np
import pytest

from lbs_estimator.client.config import OracleConfig
from lbs_estimator.client.dataset import Dataset
from lbs_estimator.client.ledger import BudgetExhaustedError, QueryLedger, QueryPhase
from lbs_estimator.client.raw import (CappedOracle, KnnOracle, OutOfRegionError, SampleCapExceededError,
                                      UnknownTupleError)
from lbs_estimator.geometry.arrangement import complex_area
from lbs_estimator.types.common import (AggregateKind, AggregateSpec, AttributeCondition, LbsMode, LocatedEntry,
                                        LocationCondition, Operator, SpatialTuple)
from lbs_estimator.types.geometry import Point2

BOX = (0.0, 0.0, 1.0, 1.0)


def test_ranking_breaks_ties_by_id():
    dataset = Dataset([SpatialTuple('b', Point2(0.6, 0.5)), SpatialTuple('a', Point2(0.4, 0.5)),
                       SpatialTuple('c', Point2(0.5, 0.9))], BOX)
    oracle = KnnOracle(dataset, OracleConfig.create(2))
    answer = oracle.knn_query(Point2(0.5, 0.5))
    assert answer.ids() == ['a', 'b']
    assert answer.rank_of('b') == 2
    assert answer.rank_of('c') is None
    assert all(isinstance(e, LocatedEntry) for e in answer.entries)
    assert answer.entries[0].loc == Point2(0.4, 0.5)


def test_rank_only_answers_carry_no_location():
    oracle = KnnOracle(small_dataset(), OracleConfig.create(3, LbsMode.LNR))
    answer = oracle.knn_query(Point2(0.5, 0.5))
    assert len(answer) == 3
    for entry in answer.entries:
        assert not hasattr(entry, 'loc')
        assert 'score' in entry.attrs


def test_query_outside_region():
    oracle = KnnOracle(small_dataset(), OracleConfig.create(1))
    with pytest.raises(OutOfRegionError):
        oracle.knn_query(Point2(1.5, 0.5))
    # a rejected query is never charged
    assert oracle.ledger.issued == 0


def test_budget_is_enforced():
    oracle = KnnOracle(small_dataset(), OracleConfig.create(1, budget=2))
    oracle.knn_query(Point2(0.1, 0.1))
    oracle.knn_query(Point2(0.2, 0.1), phase=QueryPhase.INIT)
    with pytest.raises(BudgetExhaustedError):
        oracle.knn_query(Point2(0.3, 0.1))
    assert oracle.ledger.issued == 2
    assert oracle.ledger.is_exhausted()
    assert oracle.ledger.snapshot().to_dict() == {'init': 1, 'vertex_test': 0, 'binary_search': 0, 'mc_trial': 0,
                                                  'sample': 1, 'issued': 2}


def test_max_radius_truncates():
    dataset = Dataset([SpatialTuple('a', Point2(0.5, 0.5)), SpatialTuple('b', Point2(0.9, 0.9))], BOX)
    oracle = KnnOracle(dataset, OracleConfig.create(2, max_radius=0.2))
    answer = oracle.knn_query(Point2(0.45, 0.5))
    assert answer.ids() == ['a']
    assert answer.truncated

    answer = oracle.knn_query(Point2(0.05, 0.05))
    assert answer.ids() == []
    assert answer.truncated


def test_tree_matches_brute_force():
    dataset = random_dataset(300, seed=9)
    config = OracleConfig.create(5)
    tree = KnnOracle(dataset, config)
    scan = KnnOracle(dataset, config, brute_force=True)
    rng = np.random.default_rng(3)
    for _ in range(200):
        q = Point2(*rng.random(2))
        assert tree.knn_query(q).ids() == scan.knn_query(q).ids()


def test_pass_through_condition():
    oracle = KnnOracle(small_dataset(), OracleConfig.create(2))
    red = AttributeCondition('color', Operator.EQ, 'red')
    answer = oracle.knn_query(Point2(0.5, 0.5), red)
    assert all(entry.attrs['color'] == 'red' for entry in answer.entries)
    assert [t.id for t in oracle.ground_truth_tuples(red)] == ['t1', 't3']

    post_filter = AttributeCondition('color', Operator.EQ, 'red', pass_through=False)
    with pytest.raises(ValueError):
        oracle.knn_query(Point2(0.5, 0.5), post_filter)


def test_ground_truth_aggregates():
    oracle = KnnOracle(small_dataset(), OracleConfig.create(1))
    assert oracle.ground_truth_aggregate(AggregateSpec(AggregateKind.COUNT)) == 4.0
    assert oracle.ground_truth_aggregate(AggregateSpec(AggregateKind.SUM, 'score')) == 10.0
    assert oracle.ground_truth_aggregate(AggregateSpec(AggregateKind.AVG, 'score')) == 2.5

    red = AttributeCondition('color', Operator.EQ, 'red')
    assert oracle.ground_truth_aggregate(AggregateSpec(AggregateKind.SUM, 'score', red)) == 4.0

    near_diagonal = LocationCondition((Point2(0.0, 0.0), Point2(1.0, 1.0)), 0.05)
    assert oracle.ground_truth_aggregate(AggregateSpec(AggregateKind.COUNT, condition=near_diagonal)) == 2.0

    nobody = AttributeCondition('score', Operator.GT, 100.0)
    assert math.isnan(oracle.ground_truth_aggregate(AggregateSpec(AggregateKind.AVG, 'score', nobody)))
    # ground truth never charges the ledger
    assert oracle.ledger.issued == 0


def test_ground_truth_cell():
    oracle = KnnOracle(small_dataset(), OracleConfig.create(1))
    with pytest.raises(UnknownTupleError):
        oracle.ground_truth_cell('missing')
    total = sum(complex_area(oracle.ground_truth_cell(t.id)) for t in oracle.dataset.tuples)
    assert math.isclose(total, 1.0, rel_tol=1e-9)


def test_capped_oracle():
    oracle = KnnOracle(small_dataset(), OracleConfig.create(1))
    capped = CappedOracle(oracle, 2)
    capped.knn_query(Point2(0.1, 0.1))
    capped.knn_query(Point2(0.2, 0.2))
    with pytest.raises(SampleCapExceededError):
        capped.knn_query(Point2(0.3, 0.3))
    assert capped.used == 2
    assert oracle.ledger.issued == 2
    assert capped.k == 1
    with pytest.raises(ValueError):
        CappedOracle(oracle, 0)


def test_ledger_deltas():
    ledger = QueryLedger()
    ledger.charge(QueryPhase.INIT, 4)
    before = ledger.snapshot()
    ledger.charge(QueryPhase.VERTEX_TEST, 3)
    ledger.charge(QueryPhase.INIT)
    delta = ledger.delta(before)
    assert delta.issued == 4
    assert delta.phase(QueryPhase.VERTEX_TEST) == 3
    assert delta.phase(QueryPhase.INIT) == 1
    assert delta.phase(QueryPhase.SAMPLE) == 0
    assert (before + delta).issued == ledger.issued
    assert ledger.remaining() is None
    assert not ledger.is_exhausted()

    with pytest.raises(ValueError):
        QueryLedger(-1)
    empty = QueryLedger(0)
    assert empty.is_exhausted()
    with pytest.raises(BudgetExhaustedError):
        empty.charge(QueryPhase.SAMPLE)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset([SpatialTuple('a', Point2(0.1, 0.1)), SpatialTuple('a', Point2(0.2, 0.2))], BOX)
    with pytest.raises(ValueError):
        Dataset([SpatialTuple('a', Point2(2.0, 0.1))], BOX)

    inferred = Dataset([SpatialTuple('a', Point2(0.0, 0.0)), SpatialTuple('b', Point2(1.0, 2.0))])
    assert inferred.box == pytest.approx((-0.01, -0.02, 1.01, 2.02))


def small_dataset() -> Dataset:
    return Dataset([
        SpatialTuple('t1', Point2(0.2, 0.2), {'color': 'red', 'score': 1.0}),
        SpatialTuple('t2', Point2(0.8, 0.2), {'color': 'blue', 'score': 2.0}),
        SpatialTuple('t3', Point2(0.2, 0.8), {'color': 'red', 'score': 3.0}),
        SpatialTuple('t4', Point2(0.7, 0.7), {'color': 'blue', 'score': 4.0})
    ], BOX)


def random_dataset(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    xy = rng.random((n, 2))
    return Dataset([SpatialTuple(f'p{i}', Point2(float(x), float(y))) for i, (x, y) in enumerate(xy)], BOX)
