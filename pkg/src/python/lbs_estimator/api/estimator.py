import logging
import math
import threading

from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from scipy.stats import norm

from lbs_estimator.api.lnr import LnrCellApi, NearParallelRaysError, NoEdgeError
from lbs_estimator.api.lr import LrCellApi
from lbs_estimator.client.ledger import BudgetExhaustedError, QueryPhase
from lbs_estimator.client.raw import CappedOracle, KnnOracle, SampleCapExceededError
from lbs_estimator.geometry.arrangement import complex_area
from lbs_estimator.geometry.polygons import area, sample_uniform
from lbs_estimator.types.cells import CellEstimate, History, LnrCellResult
from lbs_estimator.types.common import AggregateKind, AggregateSpec, LbsMode, QueryAnswer, RankedEntry
from lbs_estimator.types.estimates import (AggregateEstimate, DensityGrid, EstimatorOptions, NoSamplesError,
                                           SampleRecord, TupleContribution, ZeroProbabilityError, summarize_h)
from lbs_estimator.types.geometry import CellComplex, ConvexCell, Point2

logger = logging.getLogger(__name__)

CI_LEVEL = 0.95


def sample_location(region: ConvexCell, density: Optional[DensityGrid], rng: np.random.Generator) -> Point2:
    """
    Draws a query location uniformly from the region, or from the density restricted to it.
    """
    if density is None:
        return sample_uniform(region, rng)
    return density.sample(region, rng)


def inclusion_probability(cell: Union[ConvexCell, CellComplex], region: ConvexCell,
                          density: Optional[DensityGrid] = None) -> float:
    """
    Gets the probability that a sampled query location falls in the cell: its share of the region's area,
    or of the region's density mass under weighted sampling.

    :param cell: a cell inside the region; a complex may carry a max-radius disk
    :param region: the sampled region
    :param density: query density, None for uniform sampling
    :return: probability in (0, 1]
    """
    complex_ = cell if isinstance(cell, CellComplex) else CellComplex('', (cell,))
    if density is None:
        mass, total = complex_area(complex_), area(region)
    else:
        mass, total = density.complex_mass(complex_), density.mass(region)
    if not mass > 0.0:
        raise ZeroProbabilityError(complex_.owner)
    return min(1.0, mass / total)


class EstimatorApi:
    """
    Aggregate estimation over a kNN service: each sample draws a query location, and every tuple returned
    within the first h entries contributes Q(t) / p(t), p(t) being the sampling probability of its top-h
    cell. Cells come from the location-returned or rank-only pipeline depending on the service; exact
    cells are reused across samples through a shared history.
    """
    def __init__(self, oracle: KnnOracle, agg: AggregateSpec, options: Optional[EstimatorOptions] = None,
                 history: Optional[History] = None):
        """
        :param oracle: the service; its ledger enforces the overall query budget
        :param agg: the aggregate to estimate
        :param options: run knobs
        :param history: shared store of earlier answers, created when not given
        """
        self.oracle = oracle
        self.agg = agg
        self.options = options if options is not None else EstimatorOptions()
        self.history = history if history is not None else History()
        self.condition = agg.pass_through_condition()
        if self.options.density is not None and not self.options.density.covers(oracle.region):
            raise ValueError('Density grid does not cover the bounding region')

        if oracle.mode == LbsMode.LR:
            self.lr: Optional[LrCellApi] = LrCellApi(oracle, self.condition, self.options.lr_options, self.history)
            self.lnr: Optional[LnrCellApi] = None
        else:
            self.lr = None
            self.lnr = LnrCellApi(oracle, self.condition, self.options.search_params(oracle.region))

        self._lr_cells: Dict[Tuple[str, int], CellEstimate] = {}
        self._lnr_cells: Dict[Tuple[str, int], LnrCellResult] = {}
        self._locations: Dict[str, Optional[Point2]] = {}
        self._computed = 0
        self._lock = threading.Lock()

    @property
    def cells_computed(self) -> int:
        """
        Number of distinct (tuple, h) cells computed so far.
        """
        with self._lock:
            return self._computed

    def estimate_once(self, index: int, lambda0: Optional[float] = None) -> SampleRecord:
        """
        Computes one sample. The sample draws everything random from its own substream and may spend at
        most the per-sample cap of queries.

        The cap belongs to the sampled location rather than to any returned tuple: it counts every query
        spent on the location, including its own, and exceeding it discards the whole sample, never a
        single tuple's contribution. The cap is enforced while the cells are computed, so whether a
        location is discarded still depends on the cells of the tuples it returns and on which cells are
        already cached. Discards therefore lean towards expensive cells, which the `discarded` count
        exposes; unbiasedness holds only while nothing is discarded.

        :param index: sample index, selecting the random substream
        :param lambda0: volume threshold of the adaptive h choice when the policy has none
        :return: the sample record
        :raises SampleCapExceededError: the sample needed more than the per-sample cap
        :raises BudgetExhaustedError: the overall budget ran out mid-sample
        """
        if lambda0 is None:
            lambda0 = self._lambda0(())
        rng = np.random.default_rng([self.options.seed, index])
        capped = CappedOracle(self.oracle, self.options.per_sample_cap)
        q = sample_location(self.oracle.region, self.options.density, rng)
        answer = capped.knn_query(q, self.condition, QueryPhase.SAMPLE)

        snapshot = self.history.tuples()
        if self.lr is not None:
            self.history.merge([entry.to_tuple() for entry in answer.entries])
        contributions = tuple(self._contribution(capped, answer, rank, entry, snapshot, lambda0, rng)
                              for rank, entry in enumerate(answer.entries, 1))

        value = sum(c.estimate for c in contributions)
        count = sum(1.0 / c.probability for c in contributions if c.counted and c.qualifies)
        population = sum(1.0 / c.probability for c in contributions if c.counted)
        return SampleRecord(index, q, contributions, value, count, population, capped.used)

    def run_estimation(self) -> AggregateEstimate:
        """
        Runs samples until `max_samples` were attempted or the query budget is exhausted, then reduces
        them into the estimate. Samples exceeding the per-sample cap are discarded and counted; see
        `estimate_once` for how the cap interacts with unbiasedness.

        :return: the aggregate estimate; `partial` is set when the budget ran out
        :raises NoSamplesError: not a single sample completed
        """
        opts = self.options
        if opts.max_samples is None and self.oracle.ledger.budget is None:
            raise ValueError('Estimation needs max_samples or a query budget to terminate')

        start = self.oracle.ledger.snapshot()
        records: List[SampleRecord] = []
        discarded = 0
        partial = False
        lambda0 = self._lambda0(records)
        index = 0
        pool = ThreadPoolExecutor(max_workers=opts.workers) if opts.workers > 1 else None
        try:
            while not partial and (opts.max_samples is None or index < opts.max_samples):
                size = opts.lambda0_refresh
                if opts.max_samples is not None:
                    size = min(size, opts.max_samples - index)
                for i, outcome in self._batch(range(index, index + size), lambda0, pool):
                    if isinstance(outcome, SampleRecord):
                        records.append(outcome)
                    elif isinstance(outcome, SampleCapExceededError):
                        discarded += 1
                        logger.warning(f'sample {i} discarded: {outcome}')
                    else:
                        logger.info(f'query budget exhausted at sample {i}')
                        partial = True
                        break
                index += size
                lambda0 = self._lambda0(records)
                logger.info(f'{len(records)} samples completed, {discarded} discarded')
        finally:
            if pool is not None:
                pool.shutdown(wait=True)

        if not records:
            raise NoSamplesError(discarded, partial)
        return self._reduce(records, discarded, partial, self.oracle.ledger.delta(start))

    def _batch(self, indices: Sequence[int], lambda0: Optional[float],
               pool: Optional[ThreadPoolExecutor]) -> Iterator[Tuple[int, object]]:
        if pool is None:
            for i in indices:
                yield i, self._attempt(i, lambda0)
        else:
            yield from zip(indices, pool.map(lambda i: self._attempt(i, lambda0), indices))

    def _attempt(self, index: int, lambda0: Optional[float]) -> object:
        try:
            return self.estimate_once(index, lambda0)
        except (SampleCapExceededError, BudgetExhaustedError) as e:
            return e

    def _lambda0(self, records: Sequence[SampleRecord]) -> Optional[float]:
        policy = self.options.policy
        if not policy.enabled or policy.lambda0 is not None:
            return policy.lambda0
        if records:
            size = float(np.mean([r.population for r in records]))
        else:
            size = float(len(self.history))
        lambda0 = area(self.oracle.region) / max(size, 1.0)
        logger.info(f'lambda0 set to {lambda0} from a population estimate of {size}')
        return lambda0

    def _contribution(self, capped: CappedOracle, answer: QueryAnswer, rank: int, entry: RankedEntry,
                      snapshot, lambda0: Optional[float], rng: np.random.Generator) -> TupleContribution:
        if self.lr is not None:
            return self._lr_contribution(capped, rank, entry, snapshot, lambda0, rng)
        return self._lnr_contribution(capped, answer, rank, entry)

    def _lr_contribution(self, capped: CappedOracle, rank: int, entry, snapshot, lambda0: Optional[float],
                         rng: np.random.Generator) -> TupleContribution:
        t = entry.to_tuple()
        lr = self.lr._with_oracle(capped)
        if self.options.fixed_h is not None:
            h = min(self.options.fixed_h, self.oracle.k)
        else:
            h = lr.choose_h(t, rank, self.options.policy, lambda0, snapshot)
        qualifies = self.agg.qualifies(t.id, t.attrs, t.loc)
        measure = self.agg.measure(t.id, t.attrs) if qualifies else 0.0
        if rank > h:
            return TupleContribution(t.id, rank, h, False, qualifies, measure)

        reuse = self.options.lr_options.use_history
        est = None
        if reuse:
            with self._lock:
                est = self._lr_cells.get((t.id, h))
        if est is None:
            est = lr.compute_cell_exact(t, h, self.history, self.options.lr_options)
            if est.exhausted:
                raise BudgetExhaustedError(self.oracle.ledger.budget)
            with self._lock:
                self._computed += 1
                if reuse:
                    est = self._lr_cells.setdefault((t.id, h), est)

        density = self.options.density
        if est.exact:
            probability = inclusion_probability(est.upper, self.oracle.region, density)
        else:
            est = lr.mc_volume_ratio(est, rng, density)
            probability = inclusion_probability(est.upper, self.oracle.region, density) / est.mc_trials
        return TupleContribution(t.id, rank, h, True, qualifies, measure, probability, est.exact)

    def _lnr_contribution(self, capped: CappedOracle, answer: QueryAnswer, rank: int,
                          entry: RankedEntry) -> TupleContribution:
        h = min(self.options.fixed_h or 1, self.oracle.k)
        if rank > h:
            qualifies = not self.agg.needs_location() and self.agg.qualifies(entry.id, entry.attrs)
            measure = self.agg.measure(entry.id, entry.attrs) if qualifies else 0.0
            return TupleContribution(entry.id, rank, h, False, qualifies, measure, exact=False)

        lnr = self.lnr._with_oracle(capped)
        with self._lock:
            cell = self._lnr_cells.get((entry.id, h))
        if cell is None:
            cell = lnr.compute_cell_lnr(answer.query, h=h, t_id=entry.id, seed_answer=answer)
            if cell.exhausted:
                raise BudgetExhaustedError(self.oracle.ledger.budget)
            with self._lock:
                self._computed += 1
                cell = self._lnr_cells.setdefault((entry.id, h), cell)

        loc = self._inferred_location(lnr, cell) if self.agg.needs_location() else None
        qualifies = (loc is not None or not self.agg.needs_location()) and self.agg.qualifies(entry.id,
                                                                                               entry.attrs, loc)
        measure = self.agg.measure(entry.id, entry.attrs) if qualifies else 0.0
        probability = inclusion_probability(cell.polygon, self.oracle.region, self.options.density)
        return TupleContribution(entry.id, rank, h, True, qualifies, measure, probability, exact=False)

    def _inferred_location(self, lnr: LnrCellApi, cell: LnrCellResult) -> Optional[Point2]:
        with self._lock:
            if cell.owner in self._locations:
                return self._locations[cell.owner]
        try:
            loc = lnr.infer_position(cell) if cell.h == 1 else None
        except (NearParallelRaysError, NoEdgeError, ValueError) as e:
            logger.warning(f'location of {cell.owner} unknown, treated as not qualifying: {e}')
            loc = None
        with self._lock:
            return self._locations.setdefault(cell.owner, loc)

    def _reduce(self, records: List[SampleRecord], discarded: int, partial: bool, ledger) -> AggregateEstimate:
        values = np.array([r.value for r in records])
        n = len(values)
        if self.agg.kind == AggregateKind.AVG:
            counts = np.array([r.count for r in records])
            mean_count = counts.mean()
            value = float(values.mean() / mean_count) if mean_count > 0.0 else math.nan
            residuals = values - value * counts if mean_count > 0.0 else values
            variance = float(residuals.var(ddof=1) / mean_count ** 2) if n > 1 and mean_count > 0.0 else 0.0
        else:
            value = float(values.mean())
            variance = float(values.var(ddof=1)) if n > 1 else 0.0
        std_error = math.sqrt(variance / n)
        z = float(norm.ppf(0.5 + CI_LEVEL / 2))
        return AggregateEstimate(kind=self.agg.kind, value=value, sample_variance=variance, std_error=std_error,
                                 ci95=(value - z * std_error, value + z * std_error), samples=n,
                                 queries=ledger.issued, discarded=discarded, partial=partial,
                                 biased=self.agg.kind == AggregateKind.AVG, ledger=ledger,
                                 h_histogram=summarize_h(records), records=tuple(records))
