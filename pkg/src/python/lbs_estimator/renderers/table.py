import os

from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from lbs_estimator.types.cells import Localization
from lbs_estimator.types.estimates import AggregateEstimate
from lbs_estimator.types.geometry import Point2

BENCHMARK_COLUMNS = ['variant', 'sampler', 'n', 'k', 'queries', 'queriesPerCell', 'relativeError', 'sampleVariance',
                     'queriesToTarget', 'targetReached', 'runs']


class EstimateTables:
    """
    Helper class that formats AggregateEstimate objects as Pandas DataFrame objects for reports and
    tabular display.
    """

    def __init__(self, estimate: AggregateEstimate):
        self.estimate = estimate

    def to_summary_data_frame(self) -> pd.DataFrame:
        """
        Summarizes the estimate in a single row: value, variance, standard error, confidence interval,
        samples, queries and the partial / biased flags.
        """
        e = self.estimate
        rows = [
            {
                'kind': e.kind.value,
                'value': e.value,
                'sampleVariance': e.sample_variance,
                'stdError': e.std_error,
                'ciLow': e.ci95[0],
                'ciHigh': e.ci95[1],
                'samples': e.samples,
                'discarded': e.discarded,
                'queries': e.queries,
                'partial': e.partial,
                'biased': e.biased
            }
        ]
        return pd.DataFrame(rows)

    def to_ledger_data_frame(self) -> pd.DataFrame:
        """
        Creates a DataFrame of queries by phase, indexed by phase name; the total is the 'issued' row.
        """
        counts = self.estimate.ledger.to_dict()
        df = pd.DataFrame([{'phase': phase, 'queries': count} for phase, count in counts.items()])
        df.set_index('phase', inplace=True)
        return df

    def to_samples_data_frame(self) -> pd.DataFrame:
        """
        Creates a DataFrame with one row per completed sample: index, query location, value, count and
        queries spent.
        """
        rows = [
            {
                'index': r.index,
                'x': r.q.x,
                'y': r.q.y,
                'returned': len(r.contributions),
                'value': r.value,
                'count': r.count,
                'queries': r.queries
            } for r in self.estimate.records
        ]
        return pd.DataFrame(rows, columns=['index', 'x', 'y', 'returned', 'value', 'count', 'queries'])

    def to_h_data_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{'h': h, 'tuples': n} for h, n in self.estimate.h_histogram.items()],
                            columns=['h', 'tuples'])


class BenchmarkTables:
    """
    Helper class that collects benchmark rows into the stable CSV schema used by the benchmark command.
    """

    def __init__(self, rows: Sequence[Dict]):
        self.rows = list(rows)

    def to_data_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.rows, columns=BENCHMARK_COLUMNS)
        return df.astype({'n': int, 'k': int, 'runs': int})

    def to_csv(self, path: str, append: bool = True):
        """
        Writes the rows, appending to an existing file when asked; the header is only written when the
        file is created.
        """
        exists = append and os.path.exists(path)
        self.to_data_frame().to_csv(path, mode='a' if exists else 'w', header=not exists, index=False)


class LocalizationTables:
    """
    Helper class that turns localization results and ground truth into error tables.
    """

    def __init__(self, results: Sequence[Localization], truth: Dict[str, Point2]):
        self.results = list(results)
        self.truth = truth

    def to_error_data_frame(self) -> pd.DataFrame:
        """
        One row per located tuple: inferred and true location, error, queries and the location
        condition outcome when one was evaluated.
        """
        rows: List[Dict] = []
        for r in self.results:
            true_loc = self.truth.get(r.owner)
            rows.append({
                'tupleId': r.owner,
                'x': r.location.x,
                'y': r.location.y,
                'trueX': true_loc.x if true_loc is not None else np.nan,
                'trueY': true_loc.y if true_loc is not None else np.nan,
                'error': r.location.distance_to(true_loc) if true_loc is not None else np.nan,
                'queries': r.ledger_delta.issued,
                'satisfies': r.satisfies
            })
        return pd.DataFrame(rows, columns=['tupleId', 'x', 'y', 'trueX', 'trueY', 'error', 'queries', 'satisfies'])

    def to_cdf_data_frame(self) -> pd.DataFrame:
        """
        Empirical CDF of the localization error: sorted errors against the fraction of tuples located
        at least that well.
        """
        errors = np.sort(self.to_error_data_frame()['error'].dropna().to_numpy())
        fraction = np.arange(1, len(errors) + 1) / len(errors) if len(errors) else np.array([])
        return pd.DataFrame({'error': errors, 'fraction': fraction})
