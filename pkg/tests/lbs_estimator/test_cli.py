import json
import math
import os

import pandas as pd
import pytest

from lbs_estimator.cli.benchmark import queries_to_target, run_benchmark
from lbs_estimator.cli.datasets import generate_dataset, generate_frame
from lbs_estimator.cli.main import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_PARTIAL, main
from lbs_estimator.cli.report import Report
from lbs_estimator.client.dataset import load_dataset
from lbs_estimator.renderers.table import BENCHMARK_COLUMNS
from lbs_estimator.types.estimates import SampleRecord, load_density_grid
from lbs_estimator.types.geometry import Point2


def test_gen_data(tmp_path):
    points = str(tmp_path / 'points.csv')
    density = str(tmp_path / 'density.csv')
    assert main(['gen_data', '--kind=clusters', '--n=50', '--seed=3', f'--output={points}',
                 f'--density_output={density}', '--rows=4', '--cols=4']) == EXIT_OK

    dataset = load_dataset(points)
    assert len(dataset) == 50
    grid = load_density_grid(density)
    assert grid.weights.shape == (4, 4)
    assert (grid.weights > 0.0).all()

    assert main(['gen_data', '--kind=spiral', f'--output={points}']) == EXIT_CONFIG_ERROR


def test_generators_are_deterministic():
    assert generate_frame('uniform', 20, 1).equals(generate_frame('uniform', 20, 1))
    assert not generate_frame('uniform', 20, 1).equals(generate_frame('uniform', 20, 2))

    # a center point surrounded by a ring
    circle = generate_frame('circle', 9, 0)
    assert math.isclose(circle.iloc[0]['x'], 0.5) and math.isclose(circle.iloc[0]['y'], 0.5)
    radii = ((circle['x'][1:] - 0.5) ** 2 + (circle['y'][1:] - 0.5) ** 2) ** 0.5
    assert all(math.isclose(r, 0.4) for r in radii)

    with pytest.raises(ValueError):
        generate_frame('uniform', 0)


def test_estimate(tmp_path):
    output = str(tmp_path / 'report.json')
    assert main(['estimate', fixture('test_run_config.json'), f'--output={output}']) == EXIT_OK

    report = load_json(output)
    assert report['command'] == 'estimate'
    assert not report['partial']
    assert report['config']['seed'] == 11
    repetitions = report['results']['repetitions']
    assert len(repetitions) == 2
    for repetition in repetitions:
        # the cafe weights add up to 13
        assert repetition['truth'] == 13.0
        assert repetition['samples'] == 20
        ledger = repetition['ledger']
        assert repetition['queries'] == ledger['issued']
        assert sum(n for phase, n in ledger.items() if phase != 'issued') == ledger['issued']
        assert ledger['sample'] == 20
        assert set(repetition['hHistogram']) <= {'2'}
    assert report['results']['queries'] == sum(r['queries'] for r in repetitions)


def test_estimate_out_of_budget(tmp_path):
    config = load_json(fixture('test_run_config.json'))
    config['dataset'] = fixture('test_points.csv')
    config['oracle']['budget'] = 0
    path = write_json(tmp_path / 'config.json', config)
    output = str(tmp_path / 'report.json')

    assert main(['estimate', path, f'--output={output}']) == EXIT_PARTIAL
    report = load_json(output)
    assert report['partial']
    assert 'error' in report['results']['repetitions'][0]
    assert report['results']['queries'] == 0


def test_bad_configs(tmp_path):
    config = load_json(fixture('test_run_config.json'))
    del config['aggregate']
    path = write_json(tmp_path / 'config.json', config)
    assert main(['estimate', path]) == EXIT_CONFIG_ERROR
    assert main(['estimate', str(tmp_path / 'missing.json')]) == EXIT_CONFIG_ERROR

    config = load_json(fixture('test_run_config.json'))
    config['dataset'] = fixture('test_points.csv')
    config['policy']['fixedH'] = 3
    assert main(['estimate', write_json(tmp_path / 'config.json', config)]) == EXIT_CONFIG_ERROR


def test_verify_cell(tmp_path):
    output = str(tmp_path / 'cells.json')
    assert main(['verify_cell', fixture('test_run_config.json'), '--h=1', f'--output={output}']) == EXIT_OK

    results = load_json(output)['results']
    assert len(results['cells']) == 12
    assert results['maxVertexDeviation'] <= 1e-7
    assert math.isclose(results['minAreaRatio'], 1.0, rel_tol=1e-6)
    assert all(cell['exact'] for cell in results['cells'])
    assert results['queries'] == results['ledger']['issued']


def test_verify_rank_only_cell(tmp_path):
    config = load_json(fixture('test_run_config.json'))
    config['dataset'] = fixture('test_points.csv')
    config['oracle'] = {'schemaVersion': 1, 'k': 1, 'mode': 'LNR', 'region': [0.0, 0.0, 1.0, 1.0]}
    config['aggregate'] = {'kind': 'COUNT'}
    config['policy'] = {'epsilon': 1e-4}
    path = write_json(tmp_path / 'config.json', config)
    output = str(tmp_path / 'cells.json')

    assert main(['verify_cell', path, '--tuple_id=p03', f'--output={output}']) == EXIT_OK
    cell = load_json(output)['results']['cells'][0]
    assert cell['tupleId'] == 'p03'
    assert cell['converged']
    assert abs(cell['areaRatio'] - 1.0) < 0.05

    assert main(['locate', path, '--count=4', f'--output={output}']) == EXIT_OK
    results = load_json(output)['results']
    assert results['requested'] == 4
    assert results['located'] <= 4
    assert len(results['tuples']) == results['located']


def test_locate_needs_rank_only_service(tmp_path):
    assert main(['locate', fixture('test_run_config.json'), f'--output={tmp_path / "out.json"}']) == \
        EXIT_CONFIG_ERROR


def test_benchmark(tmp_path):
    output = str(tmp_path / 'bench.csv')
    assert main(['benchmark', '--kinds=uniform', '--sizes=30', '--ks=1', '--variants=LR-AGG', '--runs=2',
                 '--samples=10', '--target_error=0.5', f'--output={output}']) == EXIT_OK
    df = pd.read_csv(output)
    assert list(df.columns) == BENCHMARK_COLUMNS
    assert len(df) == 1
    assert df.iloc[0]['runs'] == 2
    assert 0.0 <= df.iloc[0]['targetReached'] <= 1.0
    assert df.iloc[0]['sampleVariance'] >= 0.0


def test_run_benchmark():
    datasets = [generate_dataset('uniform', 30, 1)]
    rows = run_benchmark(datasets, [1], ['LR-AGG-0', '+history'], ['uniform', 'weighted'], runs=1, samples=10)
    assert [(r['variant'], r['sampler']) for r in rows] == [('LR-AGG-0', 'uniform'), ('LR-AGG-0', 'weighted'),
                                                            ('+history', 'uniform'), ('+history', 'weighted')]
    assert all(r['queries'] >= 10 for r in rows)

    with pytest.raises(ValueError):
        run_benchmark(datasets, [1], ['LR-AGG-1'], ['uniform'])
    with pytest.raises(ValueError):
        run_benchmark(datasets, [1], ['LR-AGG'], ['grid'])
    with pytest.raises(ValueError):
        run_benchmark(datasets, [1], ['LR-AGG'], ['uniform'], target_error=0.0)


def test_queries_to_target():
    def records(values, queries):
        return [SampleRecord(i, Point2(0.5, 0.5), value=v, queries=q) for i, (v, q) in enumerate(zip(values, queries))]

    assert queries_to_target(records([10.0, 30.0, 20.0, 20.0], [5, 7, 3, 2]), 20.0, 0.1) == 12
    assert queries_to_target(records([20.0, 21.0], [5, 7]), 20.0, 0.1) == 5
    # the running mean ends at 30
    assert queries_to_target(records([20.0, 20.0, 50.0], [5, 7, 3]), 20.0, 0.1) is None
    assert queries_to_target([], 20.0, 0.1) is None


def test_clustered_ablation_directions():
    dataset = generate_dataset('clusters', 200, 4)
    rows = run_benchmark([dataset], [1], ['LR-AGG-0', '+history'], ['uniform', 'weighted'], runs=3, samples=30)
    row = {(r['variant'], r['sampler']): r for r in rows}

    # the same sample locations cost fewer queries with the shared history
    assert row[('+history', 'uniform')]['queries'] < row[('LR-AGG-0', 'uniform')]['queries']
    assert row[('+history', 'uniform')]['queriesPerCell'] < row[('LR-AGG-0', 'uniform')]['queriesPerCell']
    # sampling matched to the clusters evens out the inclusion probabilities
    assert row[('LR-AGG-0', 'weighted')]['sampleVariance'] < row[('LR-AGG-0', 'uniform')]['sampleVariance']


def test_report_serialization():
    report = Report('estimate', {'mean_value': float('nan'), 'per_h': {1: 2}}, partial=True)
    assert report.to_dict('2026-01-01T00:00:00') == {
        'command': 'estimate',
        'partial': True,
        'results': {'meanValue': None, 'perH': {'1': 2}},
        'generatedAt': '2026-01-01T00:00:00'
    }


def fixture(rel_path: str) -> str:
    return os.path.join(os.path.dirname(__file__), rel_path)


def load_json(path: str):
    with open(path) as f:
        return json.load(f)


def write_json(path, doc) -> str:
    with open(path, 'w') as f:
        json.dump(doc, f)
    return str(path)
