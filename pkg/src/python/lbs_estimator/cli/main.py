import dataclasses
import logging
import sys

from typing import Any, Dict, List, Optional, Sequence

import fire
import numpy as np

from scipy.spatial import cKDTree

from lbs_estimator.api.provider import LbsApiProvider
from lbs_estimator.cli.benchmark import TARGET_RELATIVE_ERROR, VARIANTS, run_benchmark
from lbs_estimator.cli.config import RunConfig, load_run_config
from lbs_estimator.cli.datasets import GENERATORS, generate_dataset, generate_frame
from lbs_estimator.cli.report import PartialResultsError, Report, estimate_fields
from lbs_estimator.client.dataset import Dataset, load_dataset
from lbs_estimator.client.ledger import BudgetExhaustedError
from lbs_estimator.client.raw import KnnOracle
from lbs_estimator.geometry.arrangement import complex_area, complex_to_shapely
from lbs_estimator.renderers.table import BenchmarkTables, LocalizationTables
from lbs_estimator.types.common import LbsMode, LocationCondition
from lbs_estimator.types.estimates import DensityGrid, NoSamplesError, load_density_grid
from lbs_estimator.types.geometry import Point2

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_PARTIAL = 3

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
CDF_QUANTILES = (0.5, 0.75, 0.9, 0.99)


class LbsCli:
    """
    Aggregate estimation over a simulated kNN location based service.

    Every command reads a JSON run configuration; any of its fields can be overridden with a flag using
    dotted names, e.g. `--oracle.k=5 --policy.fast_init=False`. Reports are JSON on stdout, or in the file
    given by `--output`.
    """

    def estimate(self, config: str, output: Optional[str] = None, **overrides) -> Optional[str]:
        """
        Estimates the configured aggregate once per repetition and reports each estimate against the
        exact value.

        :param config: path to the JSON run configuration
        :param output: optional file for the report
        :return: the report text when no output file is given
        """
        cfg = load_run_config(config, overrides)
        dataset = _load_dataset(cfg)
        density = _load_density(cfg, dataset)

        repetitions: List[Dict[str, Any]] = []
        partial = False
        for repetition in range(cfg.repetitions):
            oracle = KnnOracle(dataset, cfg.oracle)
            truth = oracle.ground_truth_aggregate(cfg.aggregate)
            api = LbsApiProvider(oracle).estimator(cfg.aggregate, cfg.estimator_options(density, repetition))
            try:
                estimate = api.run_estimation()
            except NoSamplesError as e:
                logger.error(f'repetition {repetition}: {e}')
                repetitions.append({'repetition': repetition, 'error': str(e), 'truth': truth,
                                    'queries': oracle.ledger.issued, 'ledger': oracle.ledger.snapshot().to_dict()})
                partial = partial or e.partial
                break
            repetitions.append({'repetition': repetition, **estimate_fields(estimate, truth)})
            if estimate.partial:
                partial = True
                break

        values = [r['value'] for r in repetitions if 'value' in r]
        results = {
            'repetitions': repetitions,
            'mean_value': float(np.mean(values)) if values else None,
            'queries': sum(r['queries'] for r in repetitions)
        }
        return _finish(Report('estimate', results, cfg.to_json(), partial), output)

    def verify_cell(self, config: str, tuple_id: Optional[str] = None, h: int = 1, output: Optional[str] = None,
                    **overrides) -> Optional[str]:
        """
        Computes cells through the service and compares them with the full-knowledge cells. With
        location-returned answers the exact algorithm runs without the Monte-Carlo shortcut; with rank-only
        answers each cell is seeded at the owner's true location.

        :param config: path to the JSON run configuration
        :param tuple_id: the tuple to verify; all tuples when omitted
        :param h: which top-h cell
        :param output: optional file for the report
        :return: the report text when no output file is given
        """
        cfg = load_run_config(config, overrides)
        dataset = _load_dataset(cfg)
        oracle = KnnOracle(dataset, cfg.oracle)
        if not 1 <= h <= oracle.k:
            raise ValueError(f'h must be in [1, {oracle.k}]; got {h}')
        ids = [oracle.ground_truth_tuple(str(tuple_id)).id] if tuple_id is not None else [t.id for t in dataset.tuples]
        provider = LbsApiProvider(oracle)

        cells: List[Dict[str, Any]] = []
        partial = False
        try:
            if oracle.mode == LbsMode.LR:
                lr = provider.lr(dataclasses.replace(cfg.lr_options(), monte_carlo=False))
                for t_id in ids:
                    est = lr.compute_cell_exact(oracle.ground_truth_tuple(t_id), h)
                    if est.exhausted:
                        partial = True
                        break
                    cells.append(_compare_cell(oracle, t_id, h, est.upper, est.ledger_delta.issued,
                                               {'exact': est.exact}))
            else:
                lnr = provider.lnr(cfg.estimator_options().search_params(oracle.region))
                spacing = _nearest_distances(dataset)
                for t_id in ids:
                    cell = lnr.compute_cell_lnr(oracle.ground_truth_tuple(t_id).loc, h=h, t_id=t_id)
                    if cell.exhausted:
                        partial = True
                        break
                    bound = ((spacing[t_id] - cell.epsilon) / spacing[t_id]) ** 2 if h == 1 else None
                    cells.append(_compare_cell(oracle, t_id, h, cell.polygon, cell.ledger_delta.issued,
                                               {'edges': cell.edge_count, 'converged': cell.converged,
                                                'area_ratio_bound': bound}))
        except BudgetExhaustedError as e:
            logger.warning(str(e))
            partial = True

        results = {
            'mode': oracle.mode.value,
            'h': h,
            'cells': cells,
            'max_vertex_deviation': max((c['vertex_deviation'] for c in cells), default=None),
            'min_area_ratio': min((c['area_ratio'] for c in cells if c['area_ratio'] is not None), default=None),
            'queries': oracle.ledger.issued,
            'ledger': oracle.ledger.snapshot().to_dict()
        }
        return _finish(Report('verify-cell', results, cfg.to_json(), partial), output)

    def locate(self, config: str, x: Optional[float] = None, y: Optional[float] = None, count: int = 200,
               output: Optional[str] = None, **overrides) -> Optional[str]:
        """
        Infers tuple locations from rank-only answers. With a seed location (`--x`, `--y`) locates the
        tuple returned there; otherwise locates `count` random tuples, each seeded at its true location,
        and reports the error distribution. A location condition of the configured aggregate is evaluated
        on every inferred location.

        :param config: path to the JSON run configuration; the service must be rank-only
        :param x: seed x coordinate
        :param y: seed y coordinate
        :param count: number of random tuples to locate without a seed
        :param output: optional file for the report
        :return: the report text when no output file is given
        """
        cfg = load_run_config(config, overrides)
        dataset = _load_dataset(cfg)
        oracle = KnnOracle(dataset, cfg.oracle)
        if oracle.mode != LbsMode.LNR:
            raise ValueError(f'locate needs a rank-only service; configured mode is {oracle.mode.value}')
        if (x is None) != (y is None):
            raise ValueError('Give both --x and --y, or neither')
        condition = cfg.aggregate.condition if isinstance(cfg.aggregate.condition, LocationCondition) else None
        lnr = LbsApiProvider(oracle).lnr(cfg.estimator_options().search_params(oracle.region))

        if x is not None:
            seeds = [(None, Point2(float(x), float(y)))]
        else:
            rng = np.random.default_rng(cfg.seed)
            picked = rng.choice(len(dataset), size=min(int(count), len(dataset)), replace=False)
            seeds = [(dataset.tuples[i].id, dataset.tuples[i].loc) for i in sorted(picked)]
        located = lnr.localize_all(seeds, condition=condition)
        partial = oracle.ledger.is_exhausted() and len(located) < len(seeds)

        truth = {r.owner: oracle.ground_truth_tuple(r.owner).loc for r in located}
        tables = LocalizationTables(located, truth)
        errors = tables.to_error_data_frame()
        cdf = tables.to_cdf_data_frame()
        quantiles = {str(q): float(np.quantile(cdf['error'], q)) for q in CDF_QUANTILES} if len(cdf) else {}
        results = {
            'requested': len(seeds),
            'located': len(located),
            'epsilon': lnr.params.epsilon,
            'error_quantiles': quantiles,
            'tuples': errors.to_dict(orient='records'),
            'queries': oracle.ledger.issued,
            'ledger': oracle.ledger.snapshot().to_dict()
        }
        return _finish(Report('locate', results, cfg.to_json(), partial), output)

    def benchmark(self, kinds: Any = 'clusters', sizes: Any = 1000, ks: Any = 1, variants: Any = None,
                  samplers: Any = 'uniform', runs: int = 25, samples: int = 100, seed: int = 0,
                  epsilon: Optional[float] = None, target_error: float = TARGET_RELATIVE_ERROR,
                  output: Optional[str] = None) -> str:
        """
        Sweeps estimator variants over generated datasets and emits one CSV row per combination with the
        mean query cost, relative error and sample variance of COUNT(*), and the mean queries a run
        needed to reach the target relative error.

        :param kinds: dataset generators, any of uniform, clusters, circle
        :param sizes: dataset sizes
        :param ks: top-k limits
        :param variants: variant names; all when omitted
        :param samplers: uniform and/or weighted
        :param runs: repetitions averaged per row
        :param samples: samples per repetition
        :param seed: seed of the datasets and of the first repetition
        :param epsilon: edge error of the rank-only variant
        :param target_error: relative error of the stop-at-target columns
        :param output: CSV file the rows are appended to
        :return: the rows as CSV text
        """
        datasets = [generate_dataset(kind, int(n), seed) for kind in _as_list(kinds) for n in _as_list(sizes)]
        names = _as_list(variants) if variants is not None else list(VARIANTS)
        rows = run_benchmark(datasets, [int(k) for k in _as_list(ks)], names, _as_list(samplers), int(runs),
                             int(samples), int(seed), epsilon, float(target_error))
        tables = BenchmarkTables(rows)
        if output:
            tables.to_csv(output)
        return tables.to_data_frame().to_csv(index=False)

    def gen_data(self, kind: str = 'uniform', n: int = 1000, seed: int = 0, output: Optional[str] = None,
                 density_output: Optional[str] = None, rows: int = 10, cols: int = 10) -> Optional[str]:
        """
        Generates a synthetic dataset CSV, and optionally a density grid CSV matched to it.

        :param kind: one of uniform, clusters, circle
        :param n: number of points
        :param seed: random seed
        :param output: dataset CSV file; printed when omitted
        :param density_output: optional density grid CSV file
        :param rows: density grid rows
        :param cols: density grid columns
        :return: the CSV text when no output file is given
        """
        if kind not in GENERATORS:
            raise ValueError(f'Unknown generator {kind}; expected one of {list(GENERATORS)}')
        df = generate_frame(kind, int(n), int(seed))
        if density_output:
            dataset = Dataset.from_frame(df)
            DensityGrid.from_points(dataset.locations(), dataset.box, int(rows), int(cols)).to_csv(density_output)
        if output:
            df.to_csv(output, index=False)
            return None
        return df.to_csv(index=False)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs the command line and maps failures to exit codes: 2 for configuration or data errors, 3 when
    the query budget ran out (the report is still written and flagged partial).
    """
    args = list(sys.argv[1:] if argv is None else argv)
    level = _pop_log_level(args)
    logging.basicConfig(level=level, stream=sys.stderr, format=LOG_FORMAT)
    try:
        fire.Fire(LbsCli, command=args, name='lbs-estimator')
    except (PartialResultsError, BudgetExhaustedError) as e:
        logger.error(str(e))
        return EXIT_PARTIAL
    except (ValueError, OSError) as e:
        logger.error(str(e))
        return EXIT_CONFIG_ERROR
    except fire.core.FireExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG_ERROR
    return EXIT_OK


def _finish(report: Report, output: Optional[str]) -> Optional[str]:
    text = report.write(output)
    if report.partial:
        if not output:
            print(text)
        raise PartialResultsError(report.command)
    return None if output else text


def _load_dataset(cfg: RunConfig) -> Dataset:
    return load_dataset(cfg.dataset_path, cfg.oracle.region)


def _load_density(cfg: RunConfig, dataset: Dataset) -> Optional[DensityGrid]:
    if cfg.sampler != 'weighted':
        return None
    if cfg.density_path is not None:
        return load_density_grid(cfg.density_path)
    return DensityGrid.from_points(dataset.locations(), dataset.box)


def _compare_cell(oracle: KnnOracle, t_id: str, h: int, computed, queries: int,
                  extra: Dict[str, Any]) -> Dict[str, Any]:
    truth = oracle.ground_truth_cell(t_id, h)
    true_area = complex_area(truth)
    computed_area = complex_area(computed)
    return {
        'tuple_id': t_id,
        'area': computed_area,
        'true_area': true_area,
        'area_ratio': computed_area / true_area if true_area > 0.0 else None,
        'vertex_deviation': complex_to_shapely(computed).hausdorff_distance(complex_to_shapely(truth)),
        'queries': queries,
        **extra
    }


def _nearest_distances(dataset: Dataset) -> Dict[str, float]:
    if len(dataset) < 2:
        return {t.id: np.inf for t in dataset.tuples}
    distances, _ = cKDTree(dataset.locations()).query(dataset.locations(), k=2)
    return {t.id: float(d) for t, d in zip(dataset.tuples, distances[:, 1])}


def _as_list(value: Any) -> List[Any]:
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, str):
        return [v.strip() for v in value.split(',') if v.strip()]
    return [value]


def _pop_log_level(args: List[str]) -> int:
    level = 'WARNING'
    for flag in ('--log_level', '--log-level'):
        for i, arg in enumerate(args):
            if arg.startswith(flag + '='):
                level = arg.split('=', 1)[1]
                del args[i]
                break
            if arg == flag and i + 1 < len(args):
                level = args[i + 1]
                del args[i:i + 2]
                break
    return getattr(logging, str(level).upper(), logging.WARNING)


if __name__ == '__main__':
    sys.exit(main())
