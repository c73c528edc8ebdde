import math

from typing import Iterable, List, Optional, Tuple

import numpy as np

from lbs_estimator.types.geometry import (TAU_GEOM, Circle, CoincidentPointsError, ConvexCell, EmptyCellError,
                                          HalfPlane, Point2, UnboundedCellError)


def perpendicular_bisector(a: Point2, b: Point2) -> HalfPlane:
    """
    Gets the half-plane of points at least as close to a as to b. Each Voronoi edge lies on one of these.

    :param a: the point whose side is kept
    :param b: the competing point
    :return: half-plane containing a, bounded by the perpendicular bisector of (a, b)
    """
    if a.distance_to(b) <= TAU_GEOM:
        raise CoincidentPointsError(a, b)
    nx, ny = b.x - a.x, b.y - a.y
    offset = (nx * (a.x + b.x) + ny * (a.y + b.y)) / 2
    return HalfPlane((nx, ny), offset)


def clip(cell: ConvexCell, h: HalfPlane) -> ConvexCell:
    """
    Intersects a convex cell with a half-plane (Sutherland-Hodgman against a single line). The new
    half-plane is appended to the cell's half-plane list, and edges created along its boundary are
    labeled with its index.

    :param cell: the cell to clip
    :param h: the half-plane to intersect with
    :return: the clipped cell, or the explicit empty cell when nothing remains
    """
    halfplanes = cell.halfplanes + (h,)
    if cell.is_empty:
        return ConvexCell.empty(halfplanes)

    distances = [h.signed_distance(v) for v in cell.vertices]
    if max(distances) <= TAU_GEOM:
        return ConvexCell(halfplanes, cell.vertices, cell.edge_labels, cell.is_bounded)
    if min(distances) >= -TAU_GEOM:
        return ConvexCell.empty(halfplanes)

    new_label = len(halfplanes) - 1
    points: List[Point2] = []
    labels: List[int] = []
    n = len(cell.vertices)
    for i in range(n):
        p, q = cell.vertices[i], cell.vertices[(i + 1) % n]
        sp, sq = distances[i], distances[(i + 1) % n]
        label = cell.edge_labels[i]
        p_in, q_in = sp <= TAU_GEOM, sq <= TAU_GEOM
        if p_in:
            points.append(p)
            labels.append(label)
            if not q_in:
                points.append(_crossing(p, q, sp, sq))
                labels.append(new_label)
        elif q_in:
            points.append(_crossing(p, q, sp, sq))
            labels.append(label)

    points, labels = _dedupe_ring(points, labels)
    if len(points) < 3 or _ring_area(points) <= TAU_GEOM * TAU_GEOM:
        return ConvexCell.empty(halfplanes)
    return ConvexCell(halfplanes, tuple(points), tuple(labels), cell.is_bounded)


def clip_all(cell: ConvexCell, halfplanes: Iterable[HalfPlane]) -> ConvexCell:
    for h in halfplanes:
        cell = clip(cell, h)
    return cell


def area(cell: ConvexCell) -> float:
    """
    Shoelace area of a convex cell; zero for the empty cell.
    """
    if not cell.is_bounded:
        raise UnboundedCellError('area')
    if cell.is_empty:
        return 0.0
    return _ring_area(cell.vertices)


def centroid(cell: ConvexCell) -> Point2:
    if cell.is_empty:
        raise EmptyCellError('centroid')
    xs = np.array([v.x for v in cell.vertices])
    ys = np.array([v.y for v in cell.vertices])
    xs1, ys1 = np.roll(xs, -1), np.roll(ys, -1)
    cross = xs * ys1 - xs1 * ys
    signed_area = cross.sum() / 2
    cx = ((xs + xs1) * cross).sum() / (6 * signed_area)
    cy = ((ys + ys1) * cross).sum() / (6 * signed_area)
    return Point2(float(cx), float(cy))


def contains(cell: ConvexCell, p: Point2, tol: float = TAU_GEOM) -> bool:
    if cell.is_empty:
        return False
    return all(h.contains(p, tol) for h in cell.halfplanes)


def sample_uniform(cell: ConvexCell, rng: np.random.Generator) -> Point2:
    """
    Draws a point uniformly at random from a convex cell: pick a triangle of the vertex fan with
    probability proportional to its area, then a uniform point inside that triangle.

    :param cell: bounded, nonempty cell
    :param rng: random stream to draw from
    :return: the sampled point
    """
    if not cell.is_bounded:
        raise UnboundedCellError('uniform sample')
    if cell.is_empty:
        raise EmptyCellError('uniform sample')

    anchor = cell.vertices[0]
    triangles = [(anchor, cell.vertices[i], cell.vertices[i + 1]) for i in range(1, len(cell.vertices) - 1)]
    weights = np.array([abs(_cross(a, b, c)) for a, b, c in triangles])
    index = int(rng.choice(len(triangles), p=weights / weights.sum())) if len(triangles) > 1 else 0
    a, b, c = triangles[index]
    r1, r2 = rng.random(2)
    s = math.sqrt(r1)
    x = (1 - s) * a.x + s * (1 - r2) * b.x + s * r2 * c.x
    y = (1 - s) * a.y + s * (1 - r2) * b.y + s * r2 * c.y
    return Point2(x, y)


def line_intersection(h1: HalfPlane, h2: HalfPlane) -> Optional[Point2]:
    """
    Intersection point of the two boundary lines, or None when they are (numerically) parallel.
    """
    (a1, b1), (a2, b2) = h1.normal, h2.normal
    det = a1 * b2 - a2 * b1
    if abs(det) < 1e-12:
        return None
    x = (h1.offset * b2 - h2.offset * b1) / det
    y = (a1 * h2.offset - a2 * h1.offset) / det
    return Point2(x, y)


def ray_exit(cell: ConvexCell, origin: Point2, direction: Tuple[float, float]) -> Tuple[Point2, int]:
    """
    Finds where a ray starting inside a convex cell leaves it.

    :param cell: the convex cell, e.g. the bounding region
    :param origin: ray origin, inside the cell
    :param direction: ray direction (need not be normalized)
    :return: the exit point and the index of the half-plane that stops the ray
    """
    dx, dy = direction
    best_t, best_index = math.inf, -1
    for index, h in enumerate(cell.halfplanes):
        rate = h.normal[0] * dx + h.normal[1] * dy
        if rate <= 1e-15:
            continue
        t = max(0.0, -h.signed_distance(origin) / rate)
        if t < best_t:
            best_t, best_index = t, index
    if best_index < 0:
        raise UnboundedCellError('ray exit')
    return Point2(origin.x + best_t * dx, origin.y + best_t * dy), best_index


def polygon_disk_area(cell: ConvexCell, circle: Circle) -> float:
    """
    Exact area of a convex polygon intersected with a disk: the signed areas of the triangles
    (center, a, b) clipped to the disk, summed over the counterclockwise edges (a, b).
    """
    if cell.is_empty or circle.radius <= 0.0:
        return 0.0
    cx, cy, r = circle.center.x, circle.center.y, circle.radius
    total = 0.0
    n = len(cell.vertices)
    for i in range(n):
        a, b = cell.vertices[i], cell.vertices[(i + 1) % n]
        total += _triangle_disk_area((a.x - cx, a.y - cy), (b.x - cx, b.y - cy), r)
    return max(total, 0.0)


def segment_circle_crossings(a: Point2, b: Point2, circle: Circle) -> List[Point2]:
    """
    Points where the segment (a, b) crosses the circle boundary, ordered from a to b.
    """
    origin = (a.x - circle.center.x, a.y - circle.center.y)
    params = _circle_params(origin, (b.x - a.x, b.y - a.y), circle.radius)
    return [Point2(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)) for t in params]


def _crossing(p: Point2, q: Point2, sp: float, sq: float) -> Point2:
    t = min(1.0, max(0.0, sp / (sp - sq)))
    return Point2(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))


def _dedupe_ring(points: List[Point2], labels: List[int]) -> Tuple[List[Point2], List[int]]:
    # when two consecutive points coincide the first edge has zero length: keep the second label
    out_points: List[Point2] = []
    out_labels: List[int] = []
    for p, label in zip(points, labels):
        if out_points and out_points[-1].distance_to(p) <= TAU_GEOM:
            out_points[-1] = p
            out_labels[-1] = label
        else:
            out_points.append(p)
            out_labels.append(label)
    while len(out_points) > 1 and out_points[-1].distance_to(out_points[0]) <= TAU_GEOM:
        out_points.pop()
        out_labels.pop()
    return out_points, out_labels


def _ring_area(points) -> float:
    xs = np.array([p.x for p in points])
    ys = np.array([p.y for p in points])
    return float(abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))) / 2)


def _cross(a: Point2, b: Point2, c: Point2) -> float:
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)


def _circle_params(origin: Tuple[float, float], delta: Tuple[float, float], r: float) -> List[float]:
    qa = delta[0] * delta[0] + delta[1] * delta[1]
    if qa <= 0.0:
        return []
    qb = 2 * (origin[0] * delta[0] + origin[1] * delta[1])
    qc = origin[0] * origin[0] + origin[1] * origin[1] - r * r
    disc = qb * qb - 4 * qa * qc
    if disc <= 0.0:
        return []
    root = math.sqrt(disc)
    params = [(-qb - root) / (2 * qa), (-qb + root) / (2 * qa)]
    return [t for t in params if 0.0 < t < 1.0]


def _triangle_disk_area(a: Tuple[float, float], b: Tuple[float, float], r: float) -> float:
    delta = (b[0] - a[0], b[1] - a[1])
    params = [0.0] + _circle_params(a, delta, r) + [1.0]
    total = 0.0
    for t0, t1 in zip(params, params[1:]):
        p = (a[0] + t0 * delta[0], a[1] + t0 * delta[1])
        q = (a[0] + t1 * delta[0], a[1] + t1 * delta[1])
        cross = p[0] * q[1] - p[1] * q[0]
        mid = ((p[0] + q[0]) / 2, (p[1] + q[1]) / 2)
        if math.hypot(*mid) <= r:
            total += cross / 2
        else:
            dot = p[0] * q[0] + p[1] * q[1]
            total += r * r * math.atan2(cross, dot) / 2
    return total
