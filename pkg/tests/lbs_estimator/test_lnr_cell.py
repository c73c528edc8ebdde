import math

import numpy as np
import pytest
import shapely.geometry

from lbs_estimator.api.lnr import BiasDomainError, NoEdgeError, bias_bound
from lbs_estimator.api.provider import LbsApiProvider
from lbs_estimator.client.config import OracleConfig
from lbs_estimator.client.dataset import Dataset
from lbs_estimator.client.raw import KnnOracle
from lbs_estimator.geometry.arrangement import complex_area, complex_contains, complex_to_shapely, sample_complex
from lbs_estimator.geometry.polygons import contains
from lbs_estimator.types.cells import BinarySearchParams, EdgeSource, LnrCellResult
from lbs_estimator.types.common import LbsMode, LocationCondition, SpatialTuple
from lbs_estimator.types.geometry import CellComplex, ConvexCell, Point2

BOX = (0.0, 0.0, 1.0, 1.0)
UNIT = ConvexCell.from_box(*BOX)


def test_search_params():
    params = BinarySearchParams.from_epsilon(1e-3, UNIT)
    assert params.b == 4.0
    assert params.delta_prime == 5e-4
    assert math.isclose(params.delta, math.tan(math.asin(1e-3 / 4.0)) * 5e-4)
    assert params.max_queries() == 3 * math.ceil(math.log2(4.0 / params.delta)) + 4
    with pytest.raises(ValueError):
        BinarySearchParams.from_epsilon(5.0, UNIT)


def test_binary_search_edge():
    oracle = KnnOracle(two_point_dataset(), OracleConfig.create(1, LbsMode.LNR))
    lnr = LbsApiProvider(oracle).lnr()
    edge = lnr.binary_search_edge('a', Point2(0.25, 0.5), Point2(1.0, 0.5))

    assert edge.source == EdgeSource.MIDPOINTS
    assert edge.neighbor_id == 'b'
    # the estimated line stays within epsilon of x = 0.5 across the region
    epsilon = lnr.params.epsilon
    assert abs(edge.line.signed_distance(Point2(0.5, 0.0))) <= epsilon
    assert abs(edge.line.signed_distance(Point2(0.5, 1.0))) <= epsilon
    assert edge.line.contains(Point2(0.25, 0.5))
    assert not edge.line.contains(Point2(0.75, 0.5))
    inside, outside = edge.witnesses
    assert inside.x < 0.5 < outside.x
    assert inside.distance_to(outside) <= lnr.params.delta
    assert edge.queries == oracle.ledger.issued
    assert edge.queries <= lnr.params.max_queries()


def test_binary_search_edge_reaches_region():
    oracle = KnnOracle(two_point_dataset(), OracleConfig.create(1, LbsMode.LNR))
    lnr = LbsApiProvider(oracle).lnr()
    edge = lnr.binary_search_edge('a', Point2(0.25, 0.5), Point2(0.0, 0.5))
    assert edge.source == EdgeSource.REGION
    assert edge.line == UNIT.halfplanes[3]
    assert edge.neighbor_id is None


def test_binary_search_edge_needs_owner_at_start():
    oracle = KnnOracle(two_point_dataset(), OracleConfig.create(1, LbsMode.LNR))
    lnr = LbsApiProvider(oracle).lnr()
    with pytest.raises(NoEdgeError):
        lnr.binary_search_edge('a', Point2(0.9, 0.5), Point2(1.0, 0.5))
    with pytest.raises(NoEdgeError):
        lnr.binary_search_edge('a', Point2(0.25, 0.5), Point2(0.3, 0.5), c2_outside=True)


def test_two_point_cell():
    oracle = KnnOracle(two_point_dataset(), OracleConfig.create(1, LbsMode.LNR))
    lnr = LbsApiProvider(oracle).lnr()
    cell = lnr.compute_cell_lnr(Point2(0.25, 0.5), t_id='a')
    assert cell.owner == 'a'
    assert cell.converged
    assert not cell.exhausted
    assert cell.neighbors == frozenset({'b'})
    assert math.isclose(complex_area(cell.polygon), 0.5, abs_tol=2e-3)
    assert cell.label_edges[:4] == (None, None, None, None)
    assert cell.ledger_delta.issued == oracle.ledger.issued


def test_owner_defaults_to_first_entry():
    oracle = KnnOracle(two_point_dataset(), OracleConfig.create(1, LbsMode.LNR))
    cell = LbsApiProvider(oracle).lnr().compute_cell_lnr(Point2(0.8, 0.2))
    assert cell.owner == 'b'


def test_random_cells_stay_inside_truth():
    oracle = KnnOracle(random_dataset(40, seed=31), OracleConfig.create(1, LbsMode.LNR))
    params = BinarySearchParams.from_epsilon(1e-4, UNIT)
    epsilon = params.epsilon
    lnr = LbsApiProvider(oracle).lnr(params)
    for t in oracle.dataset.tuples[:15]:
        cell = lnr.compute_cell_lnr(t.loc, t_id=t.id)
        truth = oracle.ground_truth_cell(t.id)
        true_shape = complex_to_shapely(truth)
        assert cell.converged
        assert contains(cell.polygon.faces[0], t.loc)
        for v in cell.polygon.faces[0].vertices:
            assert true_shape.distance(shapely.geometry.Point(v.as_tuple())) <= 2 * epsilon

        # no edge moves inwards by more than epsilon
        d = nearest_distance(oracle.dataset, t)
        ratio = complex_area(cell.polygon) / true_shape.area
        assert ratio >= ((d - epsilon) / d) ** 2
        assert ratio <= 1.0 + epsilon * true_shape.length / true_shape.area


def test_concave_top2_cell_is_repaired():
    oracle = KnnOracle(concave_dataset(), OracleConfig.create(2, LbsMode.LNR))
    lnr = LbsApiProvider(oracle).lnr(BinarySearchParams.from_epsilon(1e-4, UNIT))
    # at this resolution disagreeing answers near the reflex vertex can lie within 1e-9 of each other
    cell = lnr.compute_cell_lnr(Point2(0.5, 0.5), h=2, t_id='t')

    # everything but the square where both a and b are closer than t
    truth = 1.0 - 0.375 ** 2
    assert math.isclose(complex_area(oracle.ground_truth_cell('t', 2)), truth, rel_tol=1e-9)
    assert math.isclose(complex_area(cell.polygon), truth, rel_tol=1e-3)
    assert cell.converged
    assert {'a', 'b'} <= cell.neighbors


def test_coarse_concave_cell_stays_inside_truth():
    epsilon = 1e-2
    oracle = KnnOracle(concave_dataset(), OracleConfig.create(2, LbsMode.LNR))
    lnr = LbsApiProvider(oracle).lnr(BinarySearchParams.from_epsilon(epsilon, UNIT))
    cell = lnr.compute_cell_lnr(Point2(0.5, 0.5), h=2, t_id='t')
    truth = oracle.ground_truth_cell('t', 2)
    boundary = complex_to_shapely(truth).boundary

    rng = np.random.default_rng(8)
    for _ in range(4000):
        p = sample_complex(cell.polygon, rng)
        if boundary.distance(shapely.geometry.Point(p.as_tuple())) > 4 * epsilon:
            assert complex_contains(truth, p)
    assert math.isclose(complex_area(cell.polygon), complex_area(truth), abs_tol=0.02)


def test_top2_cell_covering_region():
    dataset = Dataset([SpatialTuple('t', Point2(0.5, 0.5)), SpatialTuple('a', Point2(0.3, 0.5)),
                       SpatialTuple('b', Point2(0.7, 0.5))], BOX)
    oracle = KnnOracle(dataset, OracleConfig.create(2, LbsMode.LNR))
    cell = LbsApiProvider(oracle).lnr().compute_cell_lnr(Point2(0.5, 0.5), h=2, t_id='t')
    assert math.isclose(complex_area(cell.polygon), 1.0, rel_tol=1e-6)


def test_invalid_h():
    oracle = KnnOracle(two_point_dataset(), OracleConfig.create(1, LbsMode.LNR))
    lnr = LbsApiProvider(oracle).lnr()
    with pytest.raises(ValueError):
        lnr.compute_cell_lnr(Point2(0.25, 0.5), h=2)
    top2 = LnrCellResult(owner='a', h=2, polygon=CellComplex('a', (UNIT,)), epsilon=1e-3)
    with pytest.raises(ValueError):
        lnr.infer_position(top2)


def test_localization():
    oracle = KnnOracle(random_dataset(30, seed=12), OracleConfig.create(1, LbsMode.LNR))
    params = BinarySearchParams.from_epsilon(1e-4, UNIT)
    lnr = LbsApiProvider(oracle).lnr(params)
    condition = LocationCondition((Point2(0.0, 0.5), Point2(1.0, 0.5)), 0.2)
    located = lnr.localize_all([(t.id, t.loc) for t in oracle.dataset.tuples], params, condition)

    assert len(located) >= 0.9 * len(oracle.dataset)
    errors = [loc.location.distance_to(oracle.ground_truth_tuple(loc.owner).loc) for loc in located]
    assert np.median(errors) <= 5 * params.epsilon
    # two binary searches beyond the cell itself, one at each of two vertices
    extra = [loc.ledger_delta.issued - loc.cell.ledger_delta.issued for loc in located]
    assert min(extra) > 0
    assert np.median(extra) <= 2 * params.max_queries()
    for loc in located:
        assert loc.satisfies == condition.evaluate_location(loc.location)


def test_edge_search_cost_and_error():
    params = BinarySearchParams.from_epsilon(1e-3, UNIT)
    bound = max(2 * params.delta_prime, params.b * math.sin(math.atan(params.delta / params.delta_prime)))
    rng = np.random.default_rng(40)
    checked = 0
    for instance in range(30):
        oracle = KnnOracle(random_dataset(20, seed=100 + instance), OracleConfig.create(1, LbsMode.LNR))
        lnr = LbsApiProvider(oracle).lnr(params)
        t = oracle.dataset.tuples[0]
        angle = rng.uniform(0.0, 2 * math.pi)
        edge = lnr.binary_search_edge(t.id, t.loc, t.loc.offset(math.cos(angle), math.sin(angle)))
        assert edge.queries <= params.max_queries()
        if edge.source != EdgeSource.MIDPOINTS:
            continue

        s = oracle.ground_truth_tuple(edge.neighbor_id)
        # ends of the true edge: vertices of the true cell equidistant from t and s
        ends = [v for v in oracle.ground_truth_cell(t.id).faces[0].vertices
                if abs(v.distance_to(t.loc) - v.distance_to(s.loc)) <= 1e-9]
        assert len(ends) >= 2
        for v in ends:
            assert abs(edge.line.signed_distance(v)) <= bound
        checked += 1
    assert checked >= 10


def test_count_bias_within_bound():
    epsilon = 1e-3
    oracle = KnnOracle(random_dataset(20, seed=44), OracleConfig.create(1, LbsMode.LNR))
    lnr = LbsApiProvider(oracle).lnr(BinarySearchParams.from_epsilon(epsilon, UNIT))
    # each tuple is returned with the probability of its true cell and weighted by its estimated cell
    expectation = 0.0
    for t in oracle.dataset.tuples:
        cell = lnr.compute_cell_lnr(t.loc, t_id=t.id)
        expectation += complex_area(oracle.ground_truth_cell(t.id)) / complex_area(cell.polygon)
    bias = expectation - len(oracle.dataset)
    assert abs(bias) <= bias_bound([t.loc for t in oracle.dataset.tuples], epsilon)


def test_bias_bound():
    locations = [Point2(0.0, 0.0), Point2(1.0, 0.0)]
    assert math.isclose(bias_bound(locations, 0.1), 2 * 0.19 / 0.81)
    assert bias_bound(locations, 0.0) == 0.0
    assert bias_bound(locations[:1], 0.1) == 0.0
    with pytest.raises(BiasDomainError):
        bias_bound(locations, 1.0)
    with pytest.raises(ValueError):
        bias_bound(locations, -0.1)


def two_point_dataset() -> Dataset:
    return Dataset([SpatialTuple('a', Point2(0.25, 0.5)), SpatialTuple('b', Point2(0.75, 0.5))], BOX)


def random_dataset(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.05, 0.95, size=(n, 2))
    return Dataset([SpatialTuple(f'p{i:03d}', Point2(float(x), float(y))) for i, (x, y) in enumerate(xy)], BOX)


def concave_dataset() -> Dataset:
    return Dataset([SpatialTuple('t', Point2(0.5, 0.5)), SpatialTuple('a', Point2(0.5, 0.75)),
                    SpatialTuple('b', Point2(0.75, 0.5))], BOX)


def nearest_distance(dataset: Dataset, t: SpatialTuple) -> float:
    return min(t.loc.distance_to(s.loc) for s in dataset.tuples if s is not t)
