import logging
import zlib

from typing import List, Optional, Sequence, Tuple

import numpy as np
import shapely
import shapely.geometry

from scipy.spatial import cKDTree

from lbs_estimator.geometry.polygons import (area, clip, contains, perpendicular_bisector, polygon_disk_area,
                                             sample_uniform)
from lbs_estimator.types.common import SpatialTuple
from lbs_estimator.types.geometry import (TAU_GEOM, CellComplex, Circle, ConvexCell, DuplicateLocationError,
                                          EmptyCellError, HalfPlane, Point2)

logger = logging.getLogger(__name__)

JITTER_MAGNITUDE = 1e-7


def topk_cell_from_halfplanes(owner: str, halfplanes: Sequence[HalfPlane], k: int, region: ConvexCell,
                              disk: Optional[Circle] = None) -> CellComplex:
    """
    Builds the part of the region where fewer than k of the given half-planes exclude the point. With one
    half-plane per competing tuple (the bisector keeping the owner's side) this is the owner's top-k cell.
    Each face is split by every line and tagged with the number of half-planes it lies outside of; faces
    reaching k are dropped.

    :param owner: id of the tuple whose cell is being built
    :param halfplanes: half-planes containing the owner, one per competitor
    :param k: the rank limit, at least 1
    :param region: bounding region
    :param disk: optional max-radius disk restricting the result
    :return: the cell as a complex of convex faces
    """
    if k < 1:
        raise ValueError(f'k must be >= 1; got {k}')
    faces: List[Tuple[ConvexCell, int]] = [(region, 0)]
    for h in halfplanes:
        faces = _split_faces(faces, h, k)
    return CellComplex(owner, tuple(face for face, _ in faces), disk)


def topk_cell_from_locations(t: SpatialTuple, others: Sequence[SpatialTuple], k: int, region: ConvexCell,
                             disk: Optional[Circle] = None) -> CellComplex:
    """
    Computes the top-k Voronoi cell of t with respect to the given tuples: the points of the region where
    fewer than k of the others are strictly closer than t. Competitors are processed nearest first and
    the sweep stops once a competitor's bisector cannot reach the current faces.

    :param t: the owner tuple
    :param others: competing tuples, not including t
    :param k: rank limit, at least 1
    :param region: bounding region
    :param disk: optional max-radius disk around t
    :return: the cell; `perturbed` is set when the degenerate-configuration jitter was applied
    """
    _check_distinct(t, others)
    complex_, used = _build_from_locations(t, others, k, region, disk, jitter=False)
    if _is_degenerate(t, used, complex_):
        logger.warning(f'degenerate configuration around {t.id}; applying deterministic jitter')
        complex_, _ = _build_from_locations(t, others, k, region, disk, jitter=True)
    return complex_


def boundary_vertices(complex_: CellComplex) -> List[Point2]:
    """
    Gets the vertices on the outer boundary of the union of the faces, de-duplicated within TAU_GEOM and
    without collinear points. For a single face this is simply its vertex ring. The attached disk, if
    any, is ignored.
    """
    return _dedupe([v for ring in boundary_rings(complex_) for v in ring])


def boundary_rings(complex_: CellComplex) -> List[List[Point2]]:
    """
    Gets the outer boundary rings of the union of the faces, counterclockwise. A top-k cell is
    star-shaped around its owner, so it never has holes and usually yields a single ring.
    """
    faces = [face for face in complex_.faces if not face.is_empty]
    if not faces:
        return []
    if len(faces) == 1:
        return [list(faces[0].vertices)]

    union = shapely.unary_union([_face_polygon(face) for face in faces], grid_size=TAU_GEOM)
    polygons = [union] if union.geom_type == 'Polygon' else list(getattr(union, 'geoms', []))
    rings: List[List[Point2]] = []
    for polygon in polygons:
        if polygon.geom_type != 'Polygon' or polygon.area <= TAU_GEOM * TAU_GEOM:
            continue
        exterior = shapely.geometry.polygon.orient(polygon, sign=1.0).exterior
        ring = _drop_collinear([Point2(x, y) for x, y in list(exterior.coords)[:-1]])
        if len(ring) >= 3:
            rings.append(ring)
    return rings


def complex_area(complex_: CellComplex) -> float:
    if complex_.disk is None:
        return sum(area(face) for face in complex_.faces)
    return sum(polygon_disk_area(face, complex_.disk) for face in complex_.faces)


def complex_contains(complex_: CellComplex, p: Point2, tol: float = TAU_GEOM) -> bool:
    if complex_.disk is not None and not complex_.disk.contains(p, tol):
        return False
    return any(contains(face, p, tol) for face in complex_.faces)


def sample_complex(complex_: CellComplex, rng: np.random.Generator) -> Point2:
    """
    Draws a point uniformly from the region a complex represents: a face is chosen in proportion to its
    (disk-clipped) area, then a point is drawn inside it, rejecting draws outside the disk.
    """
    weights = np.array([polygon_disk_area(face, complex_.disk) if complex_.disk is not None else area(face)
                        for face in complex_.faces])
    if len(weights) == 0 or weights.sum() <= 0.0:
        raise EmptyCellError('uniform sample')
    index = int(rng.choice(len(weights), p=weights / weights.sum()))
    face = complex_.faces[index]
    while True:
        p = sample_uniform(face, rng)
        if complex_.disk is None or complex_.disk.contains(p, 0.0):
            return p


def complex_to_shapely(complex_: CellComplex):
    """
    Union of the faces as a shapely geometry (the attached disk is not applied).
    """
    faces = [_face_polygon(face) for face in complex_.faces if not face.is_empty]
    if not faces:
        return shapely.geometry.Polygon()
    return shapely.unary_union(faces, grid_size=TAU_GEOM)


def _split_faces(faces: List[Tuple[ConvexCell, int]], h: HalfPlane, k: int) -> List[Tuple[ConvexCell, int]]:
    outside = h.complement()
    result: List[Tuple[ConvexCell, int]] = []
    for face, count in faces:
        inner = clip(face, h)
        if not inner.is_empty:
            result.append((inner, count))
        if count + 1 < k:
            outer = clip(face, outside)
            if not outer.is_empty:
                result.append((outer, count + 1))
    return result


def _build_from_locations(t: SpatialTuple, others: Sequence[SpatialTuple], k: int, region: ConvexCell,
                          disk: Optional[Circle], jitter: bool) -> Tuple[CellComplex, List[Point2]]:
    located = [(s, _jittered(t, s) if jitter else s.loc) for s in others]
    located.sort(key=lambda pair: (pair[1].distance_to(t.loc), pair[0].id))

    faces: List[Tuple[ConvexCell, int]] = [(region, 0)]
    used: List[Point2] = []
    reach = _reach(faces, t.loc, disk)
    for s, loc in located:
        # bisector of a competitor farther than twice the reach cannot touch any face
        if loc.distance_to(t.loc) > 2 * reach + TAU_GEOM:
            break
        faces = _split_faces(faces, perpendicular_bisector(t.loc, loc), k)
        used.append(loc)
        reach = _reach(faces, t.loc, disk)
    return CellComplex(t.id, tuple(face for face, _ in faces), disk, perturbed=jitter), used


def _reach(faces: List[Tuple[ConvexCell, int]], center: Point2, disk: Optional[Circle]) -> float:
    reach = max((v.distance_to(center) for face, _ in faces for v in face.vertices), default=0.0)
    if disk is not None:
        reach = min(reach, disk.radius)
    return reach


def _jittered(t: SpatialTuple, s: SpatialTuple) -> Point2:
    rng = np.random.default_rng([zlib.crc32(t.id.encode('utf-8')), zlib.crc32(s.id.encode('utf-8'))])
    dx, dy = rng.uniform(-JITTER_MAGNITUDE, JITTER_MAGNITUDE, size=2)
    return s.loc.offset(float(dx), float(dy))


def _check_distinct(t: SpatialTuple, others: Sequence[SpatialTuple]):
    if not others:
        return
    locations = np.array([[t.loc.x, t.loc.y]] + [[s.loc.x, s.loc.y] for s in others])
    pairs = cKDTree(locations).query_pairs(TAU_GEOM)
    if pairs:
        i, j = min(pairs)
        ids = [t.id] + [s.id for s in others]
        raise DuplicateLocationError(ids[i], ids[j])


def _is_degenerate(t: SpatialTuple, used: List[Point2], complex_: CellComplex) -> bool:
    # a vertex equidistant (within tolerance) from the owner and three or more competitors
    if len(used) < 3:
        return False
    locations = np.array([p.as_tuple() for p in used])
    for face in complex_.faces:
        for v in face.vertices:
            radius = v.distance_to(t.loc)
            tolerance = TAU_GEOM * max(1.0, radius) * 10
            distances = np.hypot(locations[:, 0] - v.x, locations[:, 1] - v.y)
            if np.count_nonzero(np.abs(distances - radius) <= tolerance) >= 3:
                return True
    return False


def _face_polygon(face: ConvexCell):
    return shapely.geometry.Polygon([v.as_tuple() for v in face.vertices])


def _drop_collinear(ring: List[Point2]) -> List[Point2]:
    n = len(ring)
    if n < 4:
        return ring
    kept = []
    for i in range(n):
        a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
        length = a.distance_to(c)
        if length <= TAU_GEOM:
            continue
        deviation = abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)) / length
        if deviation > TAU_GEOM:
            kept.append(b)
    return kept


def _dedupe(points: List[Point2]) -> List[Point2]:
    unique: List[Point2] = []
    for p in points:
        if all(p.distance_to(u) > TAU_GEOM for u in unique):
            unique.append(p)
    return unique
