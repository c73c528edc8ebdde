import logging

from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lbs_estimator.types.common import SpatialTuple
from lbs_estimator.types.geometry import ConvexCell, Point2

logger = logging.getLogger(__name__)

REGION_INFLATION = 0.01
REQUIRED_COLUMNS = ['id', 'x', 'y']


class Dataset:
    """
    An immutable in-memory point database together with its axis-aligned bounding region.
    """
    def __init__(self, tuples: Sequence[SpatialTuple], region: Optional[Tuple[float, float, float, float]] = None):
        """
        :param tuples: the database tuples; ids must be unique
        :param region: optional bounding box (xmin, ymin, xmax, ymax); inferred from the data when missing
        """
        ids = [t.id for t in tuples]
        if len(set(ids)) != len(ids):
            duplicates = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f'Duplicate tuple ids: {duplicates[:5]}')
        self.tuples: Tuple[SpatialTuple, ...] = tuple(tuples)
        self.box = region if region is not None else Dataset._infer_box(self.tuples)
        self.region = ConvexCell.from_box(*self.box)

        xmin, ymin, xmax, ymax = self.box
        for t in self.tuples:
            if not (xmin <= t.loc.x <= xmax and ymin <= t.loc.y <= ymax):
                raise ValueError(f'Tuple {t.id} at ({t.loc.x}, {t.loc.y}) lies outside region {self.box}')

    def __len__(self):
        return len(self.tuples)

    def locations(self) -> np.ndarray:
        return np.array([[t.loc.x, t.loc.y] for t in self.tuples], dtype=float).reshape(-1, 2)

    def attribute_names(self) -> List[str]:
        names = set()
        for t in self.tuples:
            names.update(t.attrs.keys())
        return sorted(names)

    def to_frame(self) -> pd.DataFrame:
        rows = [{'id': t.id, 'x': t.loc.x, 'y': t.loc.y, **t.attrs} for t in self.tuples]
        return pd.DataFrame(rows, columns=REQUIRED_COLUMNS + self.attribute_names())

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False)

    @staticmethod
    def from_frame(df: pd.DataFrame, region: Optional[Tuple[float, float, float, float]] = None) -> 'Dataset':
        """
        Builds a dataset from a frame with columns id, x, y and any number of attribute columns. Numeric
        columns become float attributes; everything else is kept as text.
        """
        missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f'Dataset is missing required columns: {missing}')
        attr_columns = [c for c in df.columns if c not in REQUIRED_COLUMNS]
        numeric = {c: pd.api.types.is_numeric_dtype(df[c]) for c in attr_columns}

        tuples = []
        for record in df.to_dict('records'):
            attrs: Dict[str, Any] = {}
            for c in attr_columns:
                value = record[c]
                attrs[c] = float(value) if numeric[c] else str(value)
            tuples.append(SpatialTuple(str(record['id']), Point2(float(record['x']), float(record['y'])), attrs))
        return Dataset(tuples, region)

    @staticmethod
    def _infer_box(tuples: Sequence[SpatialTuple]) -> Tuple[float, float, float, float]:
        # data bounding box inflated by 1% per side; a single point gets a unit box
        if not tuples:
            raise ValueError('Cannot infer the bounding region of an empty dataset')
        xs = [t.loc.x for t in tuples]
        ys = [t.loc.y for t in tuples]
        width, height = max(xs) - min(xs), max(ys) - min(ys)
        pad_x = REGION_INFLATION * width if width > 0 else 0.5
        pad_y = REGION_INFLATION * height if height > 0 else 0.5
        return (min(xs) - pad_x, min(ys) - pad_y, max(xs) + pad_x, max(ys) + pad_y)


def load_dataset(path: str, region: Optional[Tuple[float, float, float, float]] = None) -> Dataset:
    """
    Loads a dataset from a CSV file with header `id,x,y[,attr...]`.

    :param path: CSV file to read
    :param region: optional bounding box; defaults to the data bounding box inflated by 1%
    :return: the loaded dataset
    """
    df = pd.read_csv(path, dtype={'id': str})
    df.columns = [str(c).strip() for c in df.columns]
    dataset = Dataset.from_frame(df, region)
    logger.info(f'loaded {len(dataset)} tuples from {path}')
    return dataset
