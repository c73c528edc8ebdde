import math

from enum import Enum
from typing import List, Optional, Sequence, Tuple

import shapely.geometry

from lbs_estimator.types.geometry import TAU_GEOM, Circle, Point2

TWO_PI = 2 * math.pi
ARC_MARGIN = 1e-9

Interval = Tuple[float, float]


class Coverage(Enum):
    """
    Tri-state answer of the circle-union coverage test; only COVERED is a certificate.
    """

    COVERED = 'covered'
    """
    The closed target disk is contained in the union of the cover disks
    """

    NOT_COVERED = 'not_covered'
    """
    Some point of the target disk was found outside every cover disk
    """

    UNKNOWN = 'unknown'
    """
    Coverage could not be certified either way
    """


def circle_union_covers(target: Circle, cover: Sequence[Circle], anchor: Optional[Point2] = None) -> Coverage:
    """
    Conservatively decides whether the target disk lies inside the union of the cover disks. COVERED is
    never answered falsely (up to TAU_GEOM); configurations the test cannot settle come back UNKNOWN.

    The test tries, in order: containment in a single cover disk; an uncovered target center; the
    common-point certificate (every circle passes through one point, in which case the target is covered
    iff its center lies in the convex hull of that point and the cover centers); and finally an arc test
    which requires the target boundary, and every cover-circle arc inside the target, to be covered by the
    other disks.

    :param target: the disk to cover
    :param cover: the covering disks
    :param anchor: optional hint for the common point, e.g. the owner tuple's location
    :return: the coverage verdict
    """
    if not cover:
        return Coverage.NOT_COVERED
    for c in cover:
        if c.center.distance_to(target.center) + target.radius <= c.radius + TAU_GEOM:
            return Coverage.COVERED
    if not any(c.contains(target.center) for c in cover):
        return Coverage.NOT_COVERED
    if target.radius <= TAU_GEOM:
        return Coverage.COVERED

    common = _common_point(target, cover, anchor)
    if common is not None:
        hull = shapely.geometry.MultiPoint([common.as_tuple()] + [c.center.as_tuple() for c in cover]).convex_hull
        inside = hull.distance(shapely.geometry.Point(target.center.as_tuple())) <= TAU_GEOM
        return Coverage.COVERED if inside else Coverage.NOT_COVERED

    return _arc_test(target, cover)


def _common_point(target: Circle, cover: Sequence[Circle], anchor: Optional[Point2]) -> Optional[Point2]:
    candidates: List[Point2] = [anchor] if anchor is not None else []
    if anchor is None:
        candidates.extend(_circle_intersections(target, cover[0]))
    for candidate in candidates:
        if _on_circle(target, candidate) and all(_on_circle(c, candidate) for c in cover):
            return candidate
    return None


def _on_circle(circle: Circle, p: Point2) -> bool:
    tolerance = TAU_GEOM * max(1.0, circle.radius) * 10
    return abs(circle.center.distance_to(p) - circle.radius) <= tolerance


def _circle_intersections(a: Circle, b: Circle) -> List[Point2]:
    d = a.center.distance_to(b.center)
    if d <= TAU_GEOM or d > a.radius + b.radius or d < abs(a.radius - b.radius):
        return []
    along = (a.radius ** 2 - b.radius ** 2 + d ** 2) / (2 * d)
    half_chord = math.sqrt(max(a.radius ** 2 - along ** 2, 0.0))
    ux, uy = (b.center.x - a.center.x) / d, (b.center.y - a.center.y) / d
    base = (a.center.x + along * ux, a.center.y + along * uy)
    return [Point2(base[0] - half_chord * uy, base[1] + half_chord * ux),
            Point2(base[0] + half_chord * uy, base[1] - half_chord * ux)]


def _arc_test(target: Circle, cover: Sequence[Circle]) -> Coverage:
    covered = _merge([iv for c in cover for iv in _arcs_inside(target, c)])
    gap = _first_gap(covered)
    if gap is not None:
        p = _point_at(target, gap)
        if not any(c.contains(p) for c in cover):
            return Coverage.NOT_COVERED
        return Coverage.UNKNOWN

    for i, ci in enumerate(cover):
        needed = _arcs_inside(ci, target)
        if not needed:
            continue
        others = _merge([iv for j, cj in enumerate(cover) if j != i for iv in _arcs_inside(ci, cj)])
        if not _contains_all(others, needed):
            return Coverage.UNKNOWN
    return Coverage.COVERED


def _arcs_inside(circle: Circle, disk: Circle) -> List[Interval]:
    """
    Angular intervals of the circle boundary lying strictly inside the disk, shrunk by a small margin and
    split so that every interval lies in [0, 2π].
    """
    d = circle.center.distance_to(disk.center)
    if circle.radius <= TAU_GEOM:
        return [(0.0, TWO_PI)] if d < disk.radius - TAU_GEOM else []
    if d + circle.radius < disk.radius - TAU_GEOM:
        return [(0.0, TWO_PI)]
    if d >= circle.radius + disk.radius or d + disk.radius <= circle.radius or d <= TAU_GEOM:
        return []
    cos_half = (circle.radius ** 2 + d ** 2 - disk.radius ** 2) / (2 * circle.radius * d)
    half = math.acos(max(-1.0, min(1.0, cos_half))) - ARC_MARGIN
    if half <= 0.0:
        return []
    mid = math.atan2(disk.center.y - circle.center.y, disk.center.x - circle.center.x) % TWO_PI
    start, end = mid - half, mid + half
    if start < 0.0:
        return [(start + TWO_PI, TWO_PI), (0.0, end)]
    if end > TWO_PI:
        return [(start, TWO_PI), (0.0, end - TWO_PI)]
    return [(start, end)]


def _merge(intervals: List[Interval]) -> List[Interval]:
    merged: List[Interval] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def _first_gap(merged: List[Interval]) -> Optional[float]:
    cursor = 0.0
    for start, end in merged:
        if start > cursor:
            return (cursor + start) / 2
        cursor = max(cursor, end)
    if cursor < TWO_PI:
        return (cursor + TWO_PI) / 2
    return None


def _contains_all(merged: List[Interval], needed: List[Interval]) -> bool:
    return all(any(s <= start and end <= e for s, e in merged) for start, end in needed)


def _point_at(circle: Circle, angle: float) -> Point2:
    return Point2(circle.center.x + circle.radius * math.cos(angle), circle.center.y + circle.radius * math.sin(angle))
