import math

from dataclasses import dataclass
from typing import Optional, Tuple


TAU_GEOM = 1e-9
"""
Tolerance in region units for vertex de-duplication, point-on-line and containment tests
"""


class CoincidentPointsError(ValueError):
    """
    Error raised when asking for the bisector of two points that are (numerically) the same point.
    """
    def __init__(self, a: 'Point2', b: 'Point2'):
        super().__init__(f'Coincident points: {a} and {b} are within {TAU_GEOM} of each other')


class UnboundedCellError(ValueError):
    """
    Error raised for area and sampling operations on a cell without a bounded vertex ring.
    """
    def __init__(self, operation: str):
        super().__init__(f'Cannot compute {operation} of an unbounded cell')


class EmptyCellError(ValueError):
    """
    Error raised when an operation requires a cell with nonzero area, e.g. uniform sampling.
    """
    def __init__(self, operation: str):
        super().__init__(f'Cannot compute {operation} of an empty cell')


class DuplicateLocationError(ValueError):
    """
    Error raised when two tuples share a location, which leaves their bisector undefined.
    """
    def __init__(self, first_id: str, second_id: str):
        super().__init__(f'Tuples {first_id} and {second_id} share the same location')


class Point2:
    # forward declaration
    pass


@dataclass(frozen=True)
class Point2:
    """
    A location in the plane: both query locations and tuple locations are Point2 values.
    """

    x: float
    """
    Horizontal coordinate, in the same abstract length units as the bounding region
    """

    y: float
    """
    Vertical coordinate
    """

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f'Point2 coordinates must be finite; got ({self.x}, {self.y})')

    def distance_to(self, other: Point2) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def offset(self, dx: float, dy: float) -> Point2:
        return Point2(self.x + dx, self.y + dy)

    def midpoint(self, other: Point2) -> Point2:
        return Point2((self.x + other.x) / 2, (self.y + other.y) / 2)

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)


class HalfPlane:
    # forward declaration
    pass


@dataclass(frozen=True)
class HalfPlane:
    """
    The closed half-plane {p : normal·p ≤ offset}. The normal is rescaled to unit length at
    construction so signed distances can be compared directly against TAU_GEOM.
    """

    normal: Tuple[float, float]
    """
    Outward-facing normal of the boundary line
    """

    offset: float
    """
    Right-hand side of the defining inequality
    """

    def __post_init__(self):
        nx, ny = self.normal
        magnitude = math.hypot(nx, ny)
        if not magnitude > 0.0 or not math.isfinite(magnitude) or not math.isfinite(self.offset):
            raise ValueError(f'HalfPlane normal must be finite and nonzero; got {self.normal}')
        object.__setattr__(self, 'normal', (nx / magnitude, ny / magnitude))
        object.__setattr__(self, 'offset', self.offset / magnitude)

    def signed_distance(self, p: Point2) -> float:
        """
        Positive outside, negative inside, zero on the boundary line.
        """
        return self.normal[0] * p.x + self.normal[1] * p.y - self.offset

    def contains(self, p: Point2, tol: float = TAU_GEOM) -> bool:
        return self.signed_distance(p) <= tol

    def complement(self) -> HalfPlane:
        """
        The opposite closed half-plane, sharing the same boundary line.
        """
        return HalfPlane((-self.normal[0], -self.normal[1]), -self.offset)

    def direction(self) -> Tuple[float, float]:
        """
        Unit direction along the boundary line, oriented so the interior lies to its left.
        """
        return (-self.normal[1], self.normal[0])

    def angle(self) -> float:
        """
        Direction angle of the boundary line in radians, in (-π, π].
        """
        dx, dy = self.direction()
        return math.atan2(dy, dx)

    @staticmethod
    def through(a: Point2, b: Point2, inside: Point2) -> HalfPlane:
        """
        Builds the half-plane bounded by the line through a and b which contains the given point.

        :param a: first point on the boundary line
        :param b: second point on the boundary line
        :param inside: a point that must end up on the interior side
        :return: the oriented half-plane
        """
        nx, ny = b.y - a.y, a.x - b.x
        offset = nx * a.x + ny * a.y
        if nx * inside.x + ny * inside.y > offset:
            nx, ny, offset = -nx, -ny, -offset
        return HalfPlane((nx, ny), offset)


class Circle:
    # forward declaration
    pass


@dataclass(frozen=True)
class Circle:
    """
    A closed disk, e.g. the max-radius disk around a tuple or C(v, t) in the lower-bound construction.
    """

    center: Point2
    """
    Center of the disk
    """

    radius: float
    """
    Radius of the disk, never negative
    """

    def __post_init__(self):
        if not self.radius >= 0.0:
            raise ValueError(f'Circle radius must be >= 0; got {self.radius}')

    def contains(self, p: Point2, tol: float = TAU_GEOM) -> bool:
        return self.center.distance_to(p) <= self.radius + tol


class ConvexCell:
    # forward declaration
    pass


@dataclass(frozen=True)
class ConvexCell:
    """
    Bounded convex polygon stored as the half-planes that carve it out together with the derived
    counterclockwise vertex ring. Each edge of the ring remembers which half-plane produced it, so
    callers can map polygon edges back to bisectors (or to the bounding region).
    """

    halfplanes: Tuple[HalfPlane, ...]
    """
    Every half-plane applied to this cell, in order of application
    """

    vertices: Tuple[Point2, ...]
    """
    Counterclockwise vertex ring; empty for the empty cell
    """

    edge_labels: Tuple[int, ...]
    """
    For each i, the index into halfplanes of the line supporting the edge vertices[i] -> vertices[i + 1]
    """

    is_bounded: bool = True
    """
    False only for cells not derived from a bounded region; such cells have no area
    """

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) < 3

    def bounds(self) -> Tuple[float, float, float, float]:
        """
        Gets (xmin, ymin, xmax, ymax) of the vertex ring.
        """
        xs = [v.x for v in self.vertices]
        ys = [v.y for v in self.vertices]
        return (min(xs), min(ys), max(xs), max(ys))

    def width(self) -> float:
        xmin, _, xmax, _ = self.bounds()
        return xmax - xmin

    @staticmethod
    def empty(halfplanes: Tuple[HalfPlane, ...] = ()) -> ConvexCell:
        return ConvexCell(tuple(halfplanes), (), ())

    @staticmethod
    def from_box(xmin: float, ymin: float, xmax: float, ymax: float) -> ConvexCell:
        """
        Builds an axis-aligned rectangle; half-planes are ordered bottom, right, top, left so the edge
        labels of the ring are simply 0..3.
        """
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f'Invalid box: ({xmin}, {ymin}) - ({xmax}, {ymax})')
        halfplanes = (HalfPlane((0.0, -1.0), -ymin),
                      HalfPlane((1.0, 0.0), xmax),
                      HalfPlane((0.0, 1.0), ymax),
                      HalfPlane((-1.0, 0.0), -xmin))
        vertices = (Point2(xmin, ymin), Point2(xmax, ymin), Point2(xmax, ymax), Point2(xmin, ymax))
        return ConvexCell(halfplanes, vertices, (0, 1, 2, 3))


class CellComplex:
    # forward declaration
    pass


@dataclass(frozen=True)
class CellComplex:
    """
    A (possibly concave) region stored as convex faces with disjoint interiors, e.g. the top-k Voronoi
    cell of a tuple. When a disk is attached the represented region is the face union clipped to it.
    """

    owner: str
    """
    Id of the tuple whose cell this is
    """

    faces: Tuple[ConvexCell, ...]
    """
    Convex faces with pairwise disjoint interiors
    """

    disk: Optional[Circle] = None
    """
    Optional max-radius disk around the owner that further restricts the region
    """

    perturbed: bool = False
    """
    True if a deterministic jitter was applied to break a degenerate configuration
    """

    @property
    def is_empty(self) -> bool:
        return not any(not face.is_empty for face in self.faces)
