import math
import os.path

import numpy as np
import pytest

from lbs_estimator.cli.config import RunConfig, apply_override, load_run_config
from lbs_estimator.client.config import OracleConfig, load_oracle_config
from lbs_estimator.client.dataset import load_dataset
from lbs_estimator.types.common import AggregateKind, AttributeCondition, LbsMode, LocationCondition, Operator
from lbs_estimator.types.estimates import DensityGrid, ZeroDensityError, load_density_grid
from lbs_estimator.types.geometry import ConvexCell


def test_load_oracle_config_lr():
    config_dir = os.path.dirname(__file__)
    config = load_oracle_config('test_oracle_lr', config_dir=config_dir)

    assert config.schema_version == 1
    assert config.k == 3
    assert config.mode == LbsMode.LR
    assert config.max_radius == 0.25
    assert config.budget == 5000
    assert config.region is None


def test_load_oracle_config_lnr():
    config_dir = os.path.dirname(__file__)
    config = load_oracle_config('test_oracle_lnr', config_dir=config_dir)

    assert config.k == 1
    assert config.mode == LbsMode.LNR
    assert config.max_radius is None
    assert config.budget is None
    assert config.region == (0.0, 0.0, 2.0, 1.0)
    assert OracleConfig(config.to_json()).region == config.region


def test_invalid_oracle_configs():
    with pytest.raises(ValueError):
        OracleConfig({'schemaVersion': 1, 'k': 2})
    with pytest.raises(ValueError):
        OracleConfig({'schemaVersion': 2, 'k': 2, 'mode': 'LR'})
    with pytest.raises(ValueError):
        OracleConfig({'schemaVersion': 1, 'k': 0, 'mode': 'LR'})
    with pytest.raises(ValueError):
        OracleConfig({'schemaVersion': 1, 'k': 1, 'mode': 'LOCATIONS'})
    with pytest.raises(ValueError):
        OracleConfig({'schemaVersion': 1, 'k': 1, 'mode': 'LR', 'maxRadius': 0.0})
    with pytest.raises(ValueError):
        OracleConfig({'schemaVersion': 1, 'k': 1, 'mode': 'LR', 'region': [1.0, 0.0, 0.0, 1.0]})


def test_load_run_config():
    config = load_run_config(fixture('test_run_config.json'))

    assert config.dataset_path == fixture('test_points.csv')
    assert config.oracle.k == 2
    assert config.oracle.budget == 3000
    assert config.aggregate.kind == AggregateKind.SUM
    assert config.aggregate.attr == 'weight'
    assert config.aggregate.condition == AttributeCondition('kind', Operator.EQ, 'cafe')
    assert config.seed == 11
    assert config.repetitions == 2
    assert config.max_samples == 20
    assert not config.adaptive_h
    assert not config.monte_carlo
    assert config.fixed_h == 2

    options = config.estimator_options(repetition=1)
    assert options.seed == 12
    assert options.fixed_h == 2
    assert options.lr_options.use_history
    assert options.max_samples == 20


def test_run_config_overrides():
    config = load_run_config(fixture('test_run_config.json'),
                             {'oracle.k': 3, 'policy.monte_carlo': True, 'seed': 5, 'max_samples': 7})
    assert config.oracle.k == 3
    assert config.monte_carlo
    assert config.seed == 5
    assert config.max_samples == 7
    # the stored document reflects the overrides
    assert config.to_json()['oracle']['k'] == 3

    with pytest.raises(ValueError):
        load_run_config(fixture('test_run_config.json'), {'policy.fixed_h': 4})
    with pytest.raises(ValueError):
        load_run_config(fixture('test_run_config.json'), {'sampler': 'grid'})
    with pytest.raises(ValueError):
        load_run_config(fixture('test_run_config.json'), {'dataset': 'missing.csv'})


def test_location_condition_in_run_config():
    doc = {
        'schemaVersion': 1,
        'dataset': 'test_points.csv',
        'oracle': {'schemaVersion': 1, 'k': 1, 'mode': 'LNR'},
        'aggregate': {'kind': 'COUNT', 'condition': {'feature': [[0.0, 0.5], [1.0, 0.5]], 'maxDistance': 0.1}}
    }
    config = RunConfig(doc, base_dir=os.path.dirname(__file__))
    assert isinstance(config.aggregate.condition, LocationCondition)
    assert config.aggregate.condition.max_distance == 0.1
    assert config.aggregate.needs_location()

    doc['aggregate'] = {'kind': 'MEDIAN'}
    with pytest.raises(ValueError):
        RunConfig(doc, base_dir=os.path.dirname(__file__))


def test_apply_override_creates_nested_keys():
    config = {'policy': {'fastInit': True}}
    apply_override(config, 'policy.fast_init', False)
    apply_override(config, 'policy.mc_gamma', 0.2)
    apply_override(config, 'extra.nested_key', 1)
    assert config == {'policy': {'fastInit': False, 'mcGamma': 0.2}, 'extra': {'nestedKey': 1}}


def test_load_dataset():
    dataset = load_dataset(fixture('test_points.csv'), (0.0, 0.0, 1.0, 1.0))
    assert len(dataset) == 12
    assert dataset.attribute_names() == ['kind', 'weight']
    first = dataset.tuples[0]
    assert first.id == 'p01'
    assert first.attrs == {'kind': 'cafe', 'weight': 2.0}
    assert math.isclose(first.loc.x, 0.12)
    assert list(dataset.to_frame().columns) == ['id', 'x', 'y', 'kind', 'weight']


def test_load_density_grid():
    grid = load_density_grid(fixture('test_density.csv'))
    assert (grid.rows, grid.cols) == (2, 2)
    assert grid.weights[1, 1] == 0.0
    unit = ConvexCell.from_box(0.0, 0.0, 1.0, 1.0)
    assert math.isclose(grid.mass(unit), 4.0)
    # the lower half holds rectangles (0, 0) and (0, 1)
    assert math.isclose(grid.mass(ConvexCell.from_box(0.0, 0.0, 1.0, 0.5)), 2.0)
    assert math.isclose(grid.mass(ConvexCell.from_box(0.0, 0.75, 0.5, 1.0)), 1.0)
    assert grid.covers(unit)
    assert not grid.covers(ConvexCell.from_box(0.0, 0.0, 2.0, 1.0))

    rng = np.random.default_rng(0)
    for _ in range(100):
        p = grid.sample(unit, rng)
        # rectangle (1, 1) has zero weight
        assert not (p.x > 0.5 and p.y > 0.5)
    with pytest.raises(ZeroDensityError):
        grid.sample(ConvexCell.from_box(0.6, 0.6, 0.9, 0.9), rng)


def test_density_grid_validation():
    with pytest.raises(ZeroDensityError):
        DensityGrid(np.zeros((2, 2)), (0.0, 0.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        DensityGrid(np.array([[1.0, -1.0]]), (0.0, 0.0, 1.0, 1.0))
    grid = DensityGrid.from_points(np.array([[0.1, 0.1], [0.2, 0.1]]), (0.0, 0.0, 1.0, 1.0), rows=2, cols=2)
    assert grid.weights[0, 0] > grid.weights[1, 1] > 0.0


def fixture(rel_path: str) -> str:
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), rel_path)
