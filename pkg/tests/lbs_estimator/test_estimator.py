import math

import numpy as np
import pytest

from lbs_estimator.api.estimator import inclusion_probability
from lbs_estimator.api.provider import LbsApiProvider
from lbs_estimator.client.config import OracleConfig
from lbs_estimator.client.dataset import Dataset
from lbs_estimator.client.raw import KnnOracle
from lbs_estimator.types.cells import LrCellOptions, VarianceReductionPolicy
from lbs_estimator.types.common import (AggregateKind, AggregateSpec, AttributeCondition, LbsMode, Operator,
                                        SpatialTuple)
from lbs_estimator.types.estimates import DensityGrid, EstimatorOptions, NoSamplesError, ZeroProbabilityError
from lbs_estimator.types.geometry import CellComplex, Circle, ConvexCell, Point2

BOX = (0.0, 0.0, 1.0, 1.0)
UNIT = ConvexCell.from_box(*BOX)
COUNT = AggregateSpec(AggregateKind.COUNT)
EXACT = LrCellOptions(monte_carlo=False)


def test_inclusion_probability():
    left = ConvexCell.from_box(0.0, 0.0, 0.5, 1.0)
    assert math.isclose(inclusion_probability(left, UNIT), 0.5)

    density = DensityGrid(np.array([[1.0, 1.0], [2.0, 0.0]]), BOX)
    assert math.isclose(inclusion_probability(left, UNIT, density), 0.75)

    disk = CellComplex('t', (UNIT,), Circle(Point2(0.5, 0.5), 0.25))
    assert math.isclose(inclusion_probability(disk, UNIT), math.pi / 16)

    with pytest.raises(ZeroProbabilityError):
        inclusion_probability(ConvexCell.empty(), UNIT)
    with pytest.raises(ZeroProbabilityError):
        inclusion_probability(ConvexCell.from_box(0.6, 0.6, 0.9, 0.9), UNIT, density)


def test_expectation_over_true_cells_is_exact():
    for max_radius in (None, 0.12):
        oracle = KnnOracle(random_dataset(30, seed=21), OracleConfig.create(1, max_radius=max_radius))
        tuples = oracle.dataset.tuples
        p = np.array([inclusion_probability(oracle.ground_truth_cell(t.id), UNIT) for t in tuples])
        weights = np.array([t.attrs['weight'] for t in tuples])

        # every tuple is returned with probability p and then weighted by 1 / p
        assert math.isclose(float(np.sum(p * (1.0 / p))), len(tuples), rel_tol=1e-12)
        assert math.isclose(float(np.sum(p * (weights / p))), float(weights.sum()), rel_tol=1e-12)
        total = float(p.sum())
        if max_radius is None:
            assert math.isclose(total, 1.0, rel_tol=1e-9)
        else:
            # the remainder of the region returns nothing
            xs = (np.arange(200) + 0.5) / 200
            grid = np.array([(x, y) for x in xs for y in xs])
            gaps = np.linalg.norm(grid[:, np.newaxis, :] - oracle.dataset.locations()[np.newaxis, :, :], axis=2)
            hits = np.mean(gaps.min(axis=1) <= max_radius)
            assert total < 1.0
            assert math.isclose(total, float(hits), abs_tol=0.01)


def test_estimate_once():
    dataset = Dataset([SpatialTuple('a', Point2(0.25, 0.5)), SpatialTuple('b', Point2(0.75, 0.5))], BOX)
    oracle = KnnOracle(dataset, OracleConfig.create(1))
    estimator = LbsApiProvider(oracle).estimator(COUNT, EstimatorOptions(lr_options=EXACT))
    record = estimator.estimate_once(0)

    # either tuple owns half of the region
    assert math.isclose(record.value, 2.0)
    assert math.isclose(record.count, 2.0)
    assert math.isclose(record.population, 2.0)
    assert len(record.contributions) == 1
    contribution = record.contributions[0]
    assert contribution.counted
    assert contribution.h == 1
    assert math.isclose(contribution.probability, 0.5)
    assert record.queries == oracle.ledger.issued
    assert estimator.cells_computed == 1


def test_count_is_unbiased():
    oracle = KnnOracle(random_dataset(30, seed=5), OracleConfig.create(2))
    options = EstimatorOptions(seed=3, max_samples=300, lr_options=EXACT)
    estimate = LbsApiProvider(oracle).estimator(COUNT, options).run_estimation()

    assert estimate.samples == 300
    assert not estimate.partial
    assert not estimate.biased
    assert abs(estimate.value - 30.0) <= 4 * estimate.std_error
    assert estimate.ci95[0] < estimate.value < estimate.ci95[1]
    assert estimate.queries == oracle.ledger.issued
    assert sum(estimate.h_histogram.values()) > 0
    assert set(estimate.h_histogram) <= {1, 2}


def test_sum_with_monte_carlo_shortcut():
    oracle = KnnOracle(random_dataset(30, seed=7), OracleConfig.create(2))
    agg = AggregateSpec(AggregateKind.SUM, 'weight')
    truth = oracle.ground_truth_aggregate(agg)
    options = EstimatorOptions(seed=11, max_samples=300,
                               lr_options=LrCellOptions(mc_gamma=0.5, vertex_cap=4))
    estimate = LbsApiProvider(oracle).estimator(agg, options).run_estimation()
    assert abs(estimate.value - truth) <= 4 * estimate.std_error
    assert any(not c.exact for r in estimate.records for c in r.contributions if c.counted)


def test_sum_of_ones_equals_count():
    dataset = random_dataset(20, seed=2, weight=1.0)
    options = EstimatorOptions(seed=9, max_samples=50, lr_options=EXACT)
    count = LbsApiProvider(KnnOracle(dataset, OracleConfig.create(2))).estimator(COUNT, options).run_estimation()
    total = LbsApiProvider(KnnOracle(dataset, OracleConfig.create(2))).estimator(
        AggregateSpec(AggregateKind.SUM, 'weight'), options).run_estimation()
    assert math.isclose(count.value, total.value, rel_tol=1e-12)
    assert count.queries == total.queries


def test_weighted_sampling_is_unbiased():
    oracle = KnnOracle(random_dataset(30, seed=4), OracleConfig.create(1))
    density = DensityGrid(np.array([[1.0, 3.0], [3.0, 1.0]]), BOX)
    options = EstimatorOptions(seed=1, max_samples=300, lr_options=EXACT, density=density)
    estimate = LbsApiProvider(oracle).estimator(COUNT, options).run_estimation()
    assert abs(estimate.value - 30.0) <= 4 * estimate.std_error


def test_conditions():
    oracle = KnnOracle(random_dataset(40, seed=6), OracleConfig.create(2))
    red = AttributeCondition('color', Operator.EQ, 'red')
    post_red = AttributeCondition('color', Operator.EQ, 'red', pass_through=False)
    options = EstimatorOptions(seed=2, max_samples=300, lr_options=EXACT,
                               policy=VarianceReductionPolicy.disabled())
    for condition in (red, post_red):
        agg = AggregateSpec(AggregateKind.COUNT, condition=condition)
        truth = oracle.ground_truth_aggregate(agg)
        estimate = LbsApiProvider(KnnOracle(oracle.dataset, oracle.config)).estimator(agg, options).run_estimation()
        assert abs(estimate.value - truth) <= 4 * estimate.std_error


def test_budget_zero_yields_no_samples():
    oracle = KnnOracle(random_dataset(10, seed=1), OracleConfig.create(1, budget=0))
    estimator = LbsApiProvider(oracle).estimator(COUNT, EstimatorOptions(max_samples=5))
    with pytest.raises(NoSamplesError) as e:
        estimator.run_estimation()
    assert e.value.partial


def test_budget_stops_run_with_partial_estimate():
    oracle = KnnOracle(random_dataset(30, seed=3), OracleConfig.create(1, budget=400))
    estimate = LbsApiProvider(oracle).estimator(COUNT, EstimatorOptions(lr_options=EXACT)).run_estimation()
    assert estimate.partial
    assert estimate.samples > 0
    assert estimate.queries <= 400
    assert oracle.ledger.issued <= 400


def test_per_sample_cap_discards_samples():
    oracle = KnnOracle(random_dataset(10, seed=1), OracleConfig.create(1))
    options = EstimatorOptions(max_samples=5, per_sample_cap=1, lr_options=LrCellOptions.baseline())
    with pytest.raises(NoSamplesError) as e:
        LbsApiProvider(oracle).estimator(COUNT, options).run_estimation()
    assert not e.value.partial
    # the sample query fits the cap, every cell computation then overruns it
    assert e.value.discarded == 5


def test_run_needs_a_stopping_rule():
    oracle = KnnOracle(random_dataset(10, seed=1), OracleConfig.create(1))
    with pytest.raises(ValueError):
        LbsApiProvider(oracle).estimator(COUNT).run_estimation()


def test_density_must_cover_region():
    oracle = KnnOracle(random_dataset(10, seed=1), OracleConfig.create(1))
    density = DensityGrid(np.ones((2, 2)), (0.0, 0.0, 0.5, 0.5))
    with pytest.raises(ValueError):
        LbsApiProvider(oracle).estimator(COUNT, EstimatorOptions(max_samples=1, density=density))


def test_avg_is_flagged_biased():
    oracle = KnnOracle(random_dataset(30, seed=8), OracleConfig.create(1))
    agg = AggregateSpec(AggregateKind.AVG, 'weight')
    options = EstimatorOptions(max_samples=100, lr_options=EXACT)
    estimate = LbsApiProvider(oracle).estimator(agg, options).run_estimation()
    assert estimate.biased
    weights = [t.attrs['weight'] for t in oracle.dataset.tuples]
    assert min(weights) <= estimate.value <= max(weights)


def test_runs_are_deterministic():
    dataset = random_dataset(25, seed=10)
    options = EstimatorOptions(seed=4, max_samples=40)
    first = LbsApiProvider(KnnOracle(dataset, OracleConfig.create(2))).estimator(COUNT, options).run_estimation()
    second = LbsApiProvider(KnnOracle(dataset, OracleConfig.create(2))).estimator(COUNT, options).run_estimation()
    assert first.value == second.value
    assert first.queries == second.queries


def test_parallel_workers():
    oracle = KnnOracle(random_dataset(25, seed=12), OracleConfig.create(1))
    options = EstimatorOptions(seed=4, max_samples=60, workers=3, lr_options=EXACT)
    estimate = LbsApiProvider(oracle).estimator(COUNT, options).run_estimation()
    assert estimate.samples == 60
    assert [r.index for r in estimate.records] == list(range(60))
    assert estimate.queries == oracle.ledger.issued


def test_rank_only_count():
    oracle = KnnOracle(random_dataset(20, seed=14), OracleConfig.create(1, LbsMode.LNR))
    options = EstimatorOptions(seed=6, max_samples=60, per_sample_cap=5000)
    estimate = LbsApiProvider(oracle).estimator(COUNT, options).run_estimation()
    assert estimate.samples == 60
    assert estimate.discarded == 0
    assert all(not c.exact for r in estimate.records for c in r.contributions)
    assert abs(estimate.value - 20.0) <= 4 * estimate.std_error + 1.0


def random_dataset(n: int, seed: int, weight: float = None) -> Dataset:
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.02, 0.98, size=(n, 2))
    weights = rng.uniform(0.5, 5.0, size=n) if weight is None else np.full(n, weight)
    colors = rng.choice(['red', 'blue'], size=n)
    return Dataset([SpatialTuple(f'p{i:03d}', Point2(float(x), float(y)),
                                 {'weight': float(weights[i]), 'color': str(colors[i])})
                    for i, (x, y) in enumerate(xy)], BOX)
