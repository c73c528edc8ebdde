import logging
import math

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from lbs_estimator.api.estimator import EstimatorApi
from lbs_estimator.client.config import OracleConfig
from lbs_estimator.client.dataset import Dataset
from lbs_estimator.client.ledger import QueryPhase
from lbs_estimator.client.raw import KnnOracle
from lbs_estimator.types.cells import LrCellOptions, VarianceReductionPolicy
from lbs_estimator.types.common import AggregateKind, AggregateSpec, LbsMode
from lbs_estimator.types.estimates import DensityGrid, EstimatorOptions, SampleRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    """
    One configuration of the estimator compared by the benchmark.
    """

    name: str
    mode: LbsMode
    lr_options: LrCellOptions
    adaptive_h: bool


VARIANTS: Dict[str, Variant] = {v.name: v for v in [
    Variant('LR-AGG-0', LbsMode.LR, LrCellOptions.baseline(), False),
    Variant('+fast-init', LbsMode.LR, LrCellOptions(use_history=False, fast_init=True, monte_carlo=False), False),
    Variant('+history', LbsMode.LR, LrCellOptions(use_history=True, fast_init=True, monte_carlo=False), False),
    Variant('+adaptive-h', LbsMode.LR, LrCellOptions(use_history=True, fast_init=True, monte_carlo=False), True),
    Variant('LR-AGG', LbsMode.LR, LrCellOptions(), True),
    Variant('LNR-AGG', LbsMode.LNR, LrCellOptions(), False)
]}


TARGET_RELATIVE_ERROR = 0.1
"""
Relative error at which a run is considered to have reached its target
"""


def benchmark_row(dataset: Dataset, variant: Variant, k: int, sampler: str, runs: int, samples: int,
                  seed: int = 0, epsilon: Optional[float] = None,
                  target_error: float = TARGET_RELATIVE_ERROR) -> Dict:
    """
    Runs one variant `runs` times on a dataset, estimating COUNT(*) from a fixed number of samples, and
    averages query cost, relative error and sample variance over the runs. Each run is also replayed
    sample by sample to find where it would have stopped at the target error: the first sample after
    which the running estimate stays within `target_error` of the truth. The queries spent up to that
    sample are averaged over the runs that got there.

    :param dataset: the hidden database
    :param variant: estimator configuration
    :param k: the service's top-k limit
    :param sampler: 'uniform' or 'weighted' (density matched to the dataset)
    :param runs: repetitions, seeded seed, seed + 1, ...
    :param samples: samples per run, the horizon of the stop-at-target replay
    :param seed: first seed
    :param epsilon: edge error target for the rank-only variant
    :param target_error: relative error the stop-at-target replay aims for
    :return: a row of the benchmark CSV schema
    """
    density = DensityGrid.from_points(dataset.locations(), dataset.box) if sampler == 'weighted' else None
    truth = float(len(dataset))
    queries, per_cell, errors, variances, to_target = [], [], [], [], []
    for run in range(runs):
        oracle = KnnOracle(dataset, OracleConfig.create(k, variant.mode, region=dataset.box))
        options = EstimatorOptions(seed=seed + run, max_samples=samples, lr_options=variant.lr_options,
                                   policy=VarianceReductionPolicy(enabled=variant.adaptive_h),
                                   epsilon=epsilon, density=density)
        api = EstimatorApi(oracle, AggregateSpec(AggregateKind.COUNT), options)
        estimate = api.run_estimation()
        cell_queries = estimate.ledger.issued - estimate.ledger.phase(QueryPhase.SAMPLE)
        queries.append(estimate.queries)
        per_cell.append(cell_queries / max(api.cells_computed, 1))
        errors.append(estimate.relative_error(truth))
        variances.append(estimate.sample_variance)
        spent = queries_to_target(estimate.records, truth, target_error)
        if spent is not None:
            to_target.append(spent)
    logger.info(f'{variant.name}/{sampler} n={len(dataset)} k={k}: {np.mean(queries)} queries, '
                f'relative error {np.mean(errors)}, {len(to_target)}/{runs} runs reached {target_error}')
    return {
        'variant': variant.name,
        'sampler': sampler,
        'n': len(dataset),
        'k': k,
        'queries': float(np.mean(queries)),
        'queriesPerCell': float(np.mean(per_cell)),
        'relativeError': float(np.mean(errors)),
        'sampleVariance': float(np.mean(variances)),
        'queriesToTarget': float(np.mean(to_target)) if to_target else math.nan,
        'targetReached': len(to_target) / runs,
        'runs': runs
    }


def queries_to_target(records: Sequence[SampleRecord], truth: float, target_error: float) -> Optional[int]:
    """
    Gets the queries spent up to the first sample after which the running mean of the sample values
    stays within `target_error` relative error of the truth, or None when the last running mean is
    still off target.
    """
    if not records:
        return None
    values = np.array([r.value for r in records])
    spent = np.cumsum([r.queries for r in records])
    running = np.cumsum(values) / np.arange(1, len(values) + 1)
    off = np.flatnonzero(np.abs(running - truth) > target_error * abs(truth))
    if len(off) == 0:
        return int(spent[0])
    if off[-1] == len(values) - 1:
        return None
    return int(spent[off[-1] + 1])


def run_benchmark(datasets: Sequence[Dataset], ks: Sequence[int], variants: Sequence[str], samplers: Sequence[str],
                  runs: int = 25, samples: int = 100, seed: int = 0, epsilon: Optional[float] = None,
                  target_error: float = TARGET_RELATIVE_ERROR) -> List[Dict]:
    """
    Sweeps every combination of dataset, k, variant and sampler.
    """
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f'Unknown variants {unknown}; expected some of {list(VARIANTS)}')
    bad_samplers = [s for s in samplers if s not in ('uniform', 'weighted')]
    if bad_samplers:
        raise ValueError(f'Unknown samplers {bad_samplers}')
    if runs < 1 or samples < 1:
        raise ValueError(f'runs and samples must be >= 1; got {runs}, {samples}')
    if not target_error > 0.0:
        raise ValueError(f'target_error must be > 0; got {target_error}')
    rows = []
    for dataset in datasets:
        for k in ks:
            for name in variants:
                for sampler in samplers:
                    rows.append(benchmark_row(dataset, VARIANTS[name], k, sampler, runs, samples, seed, epsilon,
                                              target_error))
    return rows
