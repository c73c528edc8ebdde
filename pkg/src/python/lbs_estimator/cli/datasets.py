import logging

from typing import Tuple

import numpy as np
import pandas as pd

from lbs_estimator.client.dataset import Dataset

logger = logging.getLogger(__name__)

Box = Tuple[float, float, float, float]

UNIT_BOX: Box = (0.0, 0.0, 1.0, 1.0)
CATEGORIES = ['cafe', 'school', 'hotel', 'bank', 'museum']
GENERATORS = ('uniform', 'clusters', 'circle')


def generate_frame(kind: str, n: int, seed: int = 0, box: Box = UNIT_BOX, clusters: int = 5,
                   spread: float = 0.03) -> pd.DataFrame:
    """
    Builds a synthetic point set with columns id, x, y, weight, rating and category. The same kind, size
    and seed always give the same frame.

    :param kind: 'uniform' over the box, 'clusters' of Gaussian blobs, or 'circle': n - 1 points evenly
        spread on a circle around a center point, whose top-1 cell then has n - 1 edges
    :param n: number of points
    :param seed: random seed
    :param box: bounding box (xmin, ymin, xmax, ymax)
    :param clusters: number of blobs for 'clusters'
    :param spread: blob standard deviation for 'clusters', as a fraction of the box width
    :return: the frame
    """
    if kind not in GENERATORS:
        raise ValueError(f'Unknown generator {kind}; expected one of {list(GENERATORS)}')
    if n < 1:
        raise ValueError(f'n must be >= 1; got {n}')
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = box
    width, height = xmax - xmin, ymax - ymin

    if kind == 'uniform':
        xy = np.column_stack([rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n)])
    elif kind == 'clusters':
        centers = np.column_stack([rng.uniform(xmin + 0.1 * width, xmax - 0.1 * width, clusters),
                                   rng.uniform(ymin + 0.1 * height, ymax - 0.1 * height, clusters)])
        members = rng.integers(0, clusters, n)
        xy = centers[members] + rng.normal(0.0, spread * width, (n, 2))
        xy[:, 0] = np.clip(xy[:, 0], xmin, xmax)
        xy[:, 1] = np.clip(xy[:, 1], ymin, ymax)
    else:
        center = np.array([xmin + width / 2, ymin + height / 2])
        radius = 0.4 * min(width, height)
        angles = 2 * np.pi * np.arange(n - 1) / max(n - 1, 1) + rng.uniform(0.0, 2 * np.pi)
        ring = center + radius * np.column_stack([np.cos(angles), np.sin(angles)])
        xy = np.vstack([center[np.newaxis, :], ring])

    digits = len(str(n - 1))
    df = pd.DataFrame({
        'id': [f't{i:0{digits}d}' for i in range(n)],
        'x': xy[:, 0],
        'y': xy[:, 1],
        'weight': np.round(rng.uniform(0.5, 2.0, n), 6),
        'rating': rng.integers(1, 6, n).astype(float),
        'category': rng.choice(CATEGORIES, n)
    })
    logger.info(f'generated {n} {kind} points with seed {seed}')
    return df


def generate_dataset(kind: str, n: int, seed: int = 0, box: Box = UNIT_BOX, **kwargs) -> Dataset:
    return Dataset.from_frame(generate_frame(kind, n, seed, box, **kwargs), box)
