import re

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lbs_estimator.client.ledger import LedgerSnapshot
from lbs_estimator.geometry.polygons import area, clip_all, polygon_disk_area, sample_uniform
from lbs_estimator.types.cells import BinarySearchParams, LrCellOptions, VarianceReductionPolicy
from lbs_estimator.types.common import AggregateKind
from lbs_estimator.types.geometry import CellComplex, ConvexCell, Point2

Box = Tuple[float, float, float, float]

GRID_HEADER = re.compile(r'#\s*rows=(\d+),\s*cols=(\d+),'
                         r'\s*xmin=([^,]+),\s*ymin=([^,]+),\s*xmax=([^,]+),\s*ymax=([^,\s]+)')


class ZeroDensityError(ValueError):
    """
    Error raised for a density grid without any positive weight, or none inside the sampled region.
    """
    def __init__(self, where: str = 'grid'):
        super().__init__(f'Density has no positive weight in the {where}')


class ZeroProbabilityError(ValueError):
    """
    Error raised when a cell carries no sampling mass, so its inclusion probability would be zero.
    """
    def __init__(self, owner: str):
        super().__init__(f'Cell of tuple {owner} has zero inclusion probability')


class NoSamplesError(Exception):
    """
    Error raised when an estimation run completes zero samples.
    """
    def __init__(self, discarded: int, partial: bool):
        reason = 'query budget exhausted' if partial else 'no sample completed'
        super().__init__(f'No samples completed ({reason}; {discarded} discarded by the per-sample cap)')
        self.discarded = discarded
        self.partial = partial


class DensityGrid:
    """
    Piecewise-constant query density over a rectangular grid covering the region. Row indexes run along
    y and column indexes along x; the density is uniform inside each grid rectangle, which carries the
    mass given by its weight.
    """
    def __init__(self, weights: np.ndarray, box: Box):
        """
        :param weights: (rows, cols) array of nonnegative weights
        :param box: (xmin, ymin, xmax, ymax) covered by the grid
        """
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 2 or weights.size == 0:
            raise ValueError(f'Density weights must be a nonempty 2-D array; got shape {weights.shape}')
        if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
            raise ValueError('Density weights must be finite and nonnegative')
        if not weights.sum() > 0.0:
            raise ZeroDensityError()
        self.weights = weights
        self.box = tuple(float(v) for v in box)
        xmin, ymin, xmax, ymax = self.box
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f'Invalid density grid box: {box}')
        self.rows, self.cols = weights.shape
        self.cell_width = (xmax - xmin) / self.cols
        self.cell_height = (ymax - ymin) / self.rows

    def rect(self, row: int, col: int) -> ConvexCell:
        xmin, ymin = self.box[0], self.box[1]
        return ConvexCell.from_box(xmin + col * self.cell_width, ymin + row * self.cell_height,
                                   xmin + (col + 1) * self.cell_width, ymin + (row + 1) * self.cell_height)

    def covers(self, region: ConvexCell) -> bool:
        rxmin, rymin, rxmax, rymax = region.bounds()
        xmin, ymin, xmax, ymax = self.box
        tol = 1e-9 * max(1.0, xmax - xmin, ymax - ymin)
        return xmin <= rxmin + tol and ymin <= rymin + tol and rxmax <= xmax + tol and rymax <= ymax + tol

    def mass(self, cell: ConvexCell) -> float:
        """
        Density mass inside a convex cell: each grid rectangle contributes its weight times the fraction
        of its area inside the cell.
        """
        return sum(w * area(piece) / area(self.rect(row, col)) for row, col, w, piece in self._pieces(cell))

    def complex_mass(self, complex_: CellComplex) -> float:
        total = 0.0
        for face in complex_.faces:
            for row, col, w, piece in self._pieces(face):
                covered = area(piece) if complex_.disk is None else polygon_disk_area(piece, complex_.disk)
                total += w * covered / area(self.rect(row, col))
        return total

    def sample(self, region: ConvexCell, rng: np.random.Generator) -> Point2:
        """
        Draws a point inside the region with probability proportional to the density.
        """
        return self.sample_complex(CellComplex('', (region,)), rng)

    def sample_complex(self, complex_: CellComplex, rng: np.random.Generator) -> Point2:
        """
        Draws a point of a complex with probability proportional to the density: a (face, rectangle)
        piece is chosen by mass, then a uniform point inside the piece, rejecting points outside the disk.
        """
        pieces = []
        masses = []
        for face in complex_.faces:
            for row, col, w, piece in self._pieces(face):
                covered = area(piece) if complex_.disk is None else polygon_disk_area(piece, complex_.disk)
                if w > 0.0 and covered > 0.0:
                    pieces.append(piece)
                    masses.append(w * covered / area(self.rect(row, col)))
        if not pieces:
            raise ZeroDensityError('sampled region')
        masses = np.array(masses)
        piece = pieces[int(rng.choice(len(pieces), p=masses / masses.sum()))]
        while True:
            p = sample_uniform(piece, rng)
            if complex_.disk is None or complex_.disk.contains(p, 0.0):
                return p

    def to_frame(self) -> pd.DataFrame:
        rows, cols = np.indices(self.weights.shape)
        return pd.DataFrame({'row': rows.ravel(), 'col': cols.ravel(), 'weight': self.weights.ravel()})

    def to_csv(self, path: str):
        xmin, ymin, xmax, ymax = self.box
        with open(path, 'w') as out:
            out.write(f'# rows={self.rows},cols={self.cols},xmin={xmin!r},ymin={ymin!r},xmax={xmax!r},ymax={ymax!r}\n')
            self.to_frame().to_csv(out, index=False)

    @staticmethod
    def constant(box: Box, rows: int = 1, cols: int = 1) -> 'DensityGrid':
        return DensityGrid(np.ones((rows, cols)), box)

    @staticmethod
    def from_points(points: np.ndarray, box: Box, rows: int = 10, cols: int = 10, floor: float = 0.1) -> 'DensityGrid':
        """
        Builds a grid matched to a point set: a 2-D histogram plus a floor of `floor` times the mean
        count, so every rectangle keeps a positive weight.

        :param points: (n, 2) array of locations
        :param box: region covered by the grid
        :param rows: grid rows (along y)
        :param cols: grid columns (along x)
        :param floor: relative floor weight
        :return: the grid
        """
        xmin, ymin, xmax, ymax = box
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        counts, _, _ = np.histogram2d(points[:, 1], points[:, 0], bins=[rows, cols], range=[[ymin, ymax], [xmin, xmax]])
        base = max(counts.mean(), 1.0)
        return DensityGrid(counts + floor * base, box)

    def _pieces(self, cell: ConvexCell):
        if cell.is_empty:
            return
        cxmin, cymin, cxmax, cymax = cell.bounds()
        xmin, ymin = self.box[0], self.box[1]
        col_lo = max(0, int(np.floor((cxmin - xmin) / self.cell_width)))
        col_hi = min(self.cols - 1, int(np.floor((cxmax - xmin) / self.cell_width)))
        row_lo = max(0, int(np.floor((cymin - ymin) / self.cell_height)))
        row_hi = min(self.rows - 1, int(np.floor((cymax - ymin) / self.cell_height)))
        for row in range(row_lo, row_hi + 1):
            for col in range(col_lo, col_hi + 1):
                w = float(self.weights[row, col])
                if w == 0.0:
                    continue
                piece = clip_all(self.rect(row, col), cell.halfplanes)
                if not piece.is_empty:
                    yield row, col, w, piece


def load_density_grid(path: str) -> DensityGrid:
    """
    Loads a density grid CSV: a first line `# rows=R,cols=C,xmin=..,ymin=..,xmax=..,ymax=..` followed by
    `row,col,weight` records. Rectangles without a record get weight zero.

    :param path: CSV file to read
    :return: the validated grid
    """
    with open(path) as grid_file:
        header = grid_file.readline().strip()
        match = GRID_HEADER.match(header)
        if match is None:
            raise ValueError(f'{path}: first line must be "# rows=R,cols=C,xmin=..,ymin=..,xmax=..,ymax=.."')
        rows, cols = int(match.group(1)), int(match.group(2))
        box = tuple(float(match.group(i)) for i in range(3, 7))
        df = pd.read_csv(grid_file)

    missing = [c for c in ('row', 'col', 'weight') if c not in df.columns]
    if missing:
        raise ValueError(f'{path}: missing columns {missing}')
    weights = np.zeros((rows, cols))
    for row, col, weight in zip(df['row'], df['col'], df['weight']):
        if not (0 <= row < rows and 0 <= col < cols):
            raise ValueError(f'{path}: cell ({row}, {col}) outside a {rows}x{cols} grid')
        weights[int(row), int(col)] = float(weight)
    return DensityGrid(weights, box)


class TupleContribution:
    # forward declaration
    pass


@dataclass(frozen=True)
class TupleContribution:
    """
    What one returned tuple added to a sample's estimate.
    """

    tuple_id: str
    """
    Id of the returned tuple
    """

    rank: int
    """
    1-based rank of the tuple in the sample's answer
    """

    h: int
    """
    The top-h cell definition chosen for this tuple
    """

    counted: bool
    """
    Whether the tuple takes part in the estimate, i.e. rank <= h
    """

    qualifies: bool = False
    """
    Whether the tuple satisfies the selection condition
    """

    measure: float = 0.0
    """
    Q(t): 1 for COUNT, the aggregated attribute for SUM and AVG; 0 when the tuple does not qualify
    """

    probability: Optional[float] = None
    """
    Inclusion probability of the tuple's top-h cell, when counted
    """

    exact: bool = True
    """
    False when the probability came from a Monte-Carlo trial count or an estimated edge set
    """

    @property
    def estimate(self) -> float:
        return self.measure / self.probability if self.counted and self.probability else 0.0


class SampleRecord:
    # forward declaration
    pass


@dataclass(frozen=True)
class SampleRecord:
    """
    One sampled query location and everything it contributed.
    """

    index: int
    """
    Position of the sample in the run; selects its random substream
    """

    q: Point2
    """
    The sampled query location
    """

    contributions: Tuple[TupleContribution, ...] = ()
    """
    One entry per returned tuple, in rank order
    """

    value: float = 0.0
    """
    Sum of Q(t)/p(t) over counted tuples: the sample's COUNT or SUM estimate
    """

    count: float = 0.0
    """
    Sum of 1/p(t) over counted qualifying tuples: the sample's COUNT estimate, the AVG denominator
    """

    population: float = 0.0
    """
    Sum of 1/p(t) over counted tuples regardless of the condition; drives the running size estimate
    """

    queries: int = 0
    """
    Queries the sample spent
    """


class AggregateEstimate:
    # forward declaration
    pass


@dataclass(frozen=True)
class AggregateEstimate:
    """
    Result of an estimation run.
    """

    kind: AggregateKind
    """
    The estimated aggregate
    """

    value: float
    """
    Point estimate
    """

    sample_variance: float
    """
    Bessel-corrected variance of the per-sample values (linearized for AVG)
    """

    std_error: float
    """
    Standard error of the point estimate
    """

    ci95: Tuple[float, float]
    """
    Normal-approximation 95% confidence interval centered at value
    """

    samples: int
    """
    Completed samples
    """

    queries: int
    """
    Queries issued during the run
    """

    discarded: int = 0
    """
    Samples aborted by the per-sample cap
    """

    partial: bool = False
    """
    The query budget ran out; the estimate uses the samples completed before that
    """

    biased: bool = False
    """
    True for AVG, a ratio of two unbiased estimates
    """

    ledger: LedgerSnapshot = field(default_factory=LedgerSnapshot)
    """
    Queries issued during the run, by phase
    """

    h_histogram: Dict[int, int] = field(default_factory=dict)
    """
    How often each h was chosen for counted tuples
    """

    records: Tuple[SampleRecord, ...] = ()
    """
    The completed samples, in index order
    """

    def relative_error(self, truth: float) -> float:
        return abs(self.value - truth) / abs(truth) if truth else abs(self.value)


class EstimatorOptions:
    # forward declaration
    pass


@dataclass(frozen=True)
class EstimatorOptions:
    """
    Knobs of an estimation run.
    """

    seed: int = 0
    """
    Master seed; sample i draws from numpy.random.default_rng([seed, i])
    """

    max_samples: Optional[int] = None
    """
    Stop after this many samples; None to run until the query budget is exhausted
    """

    per_sample_cap: int = 500
    """
    Samples needing more queries than this are discarded
    """

    workers: int = 1
    """
    Samples computed concurrently; results are deterministic for a single worker
    """

    lr_options: LrCellOptions = field(default_factory=LrCellOptions)
    """
    Cell computation switches in location-returned mode
    """

    policy: VarianceReductionPolicy = field(default_factory=VarianceReductionPolicy)
    """
    Adaptive h selection; lambda0 lives here
    """

    fixed_h: Optional[int] = None
    """
    Use this h for every tuple instead of the adaptive choice (always the case in rank-only mode)
    """

    lambda0_refresh: int = 50
    """
    Samples between refreshes of the running lambda0 default
    """

    epsilon: Optional[float] = None
    """
    Maximum edge error in rank-only mode; None for 1e-3 times the region width
    """

    density: Optional[DensityGrid] = None
    """
    Query density for weighted sampling; None samples uniformly
    """

    def __post_init__(self):
        if self.max_samples is not None and self.max_samples < 1:
            raise ValueError(f'max_samples must be >= 1; got {self.max_samples}')
        if self.per_sample_cap < 1:
            raise ValueError(f'per_sample_cap must be >= 1; got {self.per_sample_cap}')
        if self.workers < 1:
            raise ValueError(f'workers must be >= 1; got {self.workers}')
        if self.fixed_h is not None and self.fixed_h < 1:
            raise ValueError(f'fixed_h must be >= 1; got {self.fixed_h}')
        if self.lambda0_refresh < 1:
            raise ValueError(f'lambda0_refresh must be >= 1; got {self.lambda0_refresh}')
        if self.epsilon is not None and not self.epsilon > 0.0:
            raise ValueError(f'epsilon must be > 0; got {self.epsilon}')

    def search_params(self, region: ConvexCell) -> BinarySearchParams:
        epsilon = self.epsilon if self.epsilon is not None else 1e-3 * region.width()
        return BinarySearchParams.from_epsilon(epsilon, region)


def summarize_h(records: Sequence[SampleRecord]) -> Dict[int, int]:
    histogram: Dict[int, int] = {}
    for record in records:
        for c in record.contributions:
            if c.counted:
                histogram[c.h] = histogram.get(c.h, 0) + 1
    return dict(sorted(histogram.items()))

