import math
import operator

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

from lbs_estimator.types.geometry import Point2


class UnknownAttributeError(ValueError):
    """
    Error raised when an aggregate or condition refers to an attribute a tuple does not carry.
    """
    def __init__(self, attr: str, tuple_id: str = None):
        where = f' on tuple {tuple_id}' if tuple_id is not None else ''
        super().__init__(f'Unknown attribute: {attr}{where}')


class LbsMode(Enum):
    """
    Which flavor of location based service the oracle simulates.
    """

    LR = 'LR'
    """
    Location-returned: every answer entry carries the tuple's location
    """

    LNR = 'LNR'
    """
    Location-not-returned: answers carry ranked ids and attributes only
    """


class SpatialTuple:
    # forward declaration
    pass


@dataclass(frozen=True)
class SpatialTuple:
    """
    One database point: an id, a location and a map of attributes (numbers or text).
    """

    id: str
    """
    Identifier, unique within a dataset
    """

    loc: Point2
    """
    Location of the tuple inside the bounding region
    """

    attrs: Mapping[str, Any] = field(default_factory=dict)
    """
    Attribute name to value; numeric values are floats, everything else text
    """

    def __hash__(self):
        return hash(self.id)


class RankedEntry:
    # forward declaration
    pass


@dataclass(frozen=True)
class RankedEntry:
    """
    One entry of a rank-only answer: no location field exists on this type.
    """

    id: str
    """
    Id of the returned tuple
    """

    attrs: Mapping[str, Any]
    """
    Attributes of the returned tuple
    """

    def __hash__(self):
        return hash(self.id)


@dataclass(frozen=True)
class LocatedEntry(RankedEntry):
    """
    Answer entry of a location-returned service, which adds the tuple's location.
    """

    loc: Point2 = None
    """
    Location of the returned tuple
    """

    def __hash__(self):
        return hash(self.id)

    def to_tuple(self) -> SpatialTuple:
        return SpatialTuple(self.id, self.loc, self.attrs)


@dataclass(frozen=True)
class QueryAnswer:
    """
    Ranked answer of a kNN query, nearest first.
    """

    query: Point2
    """
    The query location
    """

    entries: Tuple[RankedEntry, ...]
    """
    At most k entries sorted by distance to the query location, ties broken by ascending id
    """

    truncated: bool = False
    """
    True when the max-radius cutoff removed tuples that would otherwise have been returned
    """

    def ids(self) -> List[str]:
        return [entry.id for entry in self.entries]

    def rank_of(self, tuple_id: str) -> Optional[int]:
        """
        Gets the 1-based rank of a tuple in this answer, or None if it was not returned.
        """
        for rank, entry in enumerate(self.entries, 1):
            if entry.id == tuple_id:
                return rank
        return None

    def __len__(self):
        return len(self.entries)


class Operator(Enum):
    """
    Comparison operators supported in attribute conditions.
    """

    EQ = '=='
    NE = '!='
    LT = '<'
    LE = '<='
    GT = '>'
    GE = '>='


_OPERATORS: Dict[Operator, Callable[[Any, Any], bool]] = {
    Operator.EQ: operator.eq,
    Operator.NE: operator.ne,
    Operator.LT: operator.lt,
    Operator.LE: operator.le,
    Operator.GT: operator.gt,
    Operator.GE: operator.ge
}


@dataclass(frozen=True)
class AttributeCondition:
    """
    Selection condition on one attribute, e.g. category == 'cafe'. A pass-through condition is handed to
    the service and applied before ranking; otherwise it is evaluated afterwards as a post-filter.
    """

    attr: str
    """
    Attribute name the condition tests
    """

    op: Operator
    """
    Comparison operator
    """

    value: Any
    """
    Right-hand side of the comparison
    """

    pass_through: bool = True
    """
    Whether the service can evaluate this condition itself
    """

    def evaluate(self, attrs: Mapping[str, Any], tuple_id: str = None) -> bool:
        if self.attr not in attrs:
            raise UnknownAttributeError(self.attr, tuple_id)
        return bool(_OPERATORS[self.op](attrs[self.attr], self.value))


@dataclass(frozen=True)
class LocationCondition:
    """
    Post-filter on a tuple's location: the tuple qualifies if it lies within max_distance of a polyline
    feature, e.g. a highway. Services never evaluate it, so it is never pass-through.
    """

    feature: Tuple[Point2, ...]
    """
    Vertices of the polyline feature
    """

    max_distance: float
    """
    Largest distance from the feature that still qualifies
    """

    pass_through: bool = False

    def __post_init__(self):
        if len(self.feature) < 1:
            raise ValueError('LocationCondition needs at least one feature vertex')
        if not self.max_distance >= 0.0:
            raise ValueError(f'max_distance must be >= 0; got {self.max_distance}')
        if self.pass_through:
            raise ValueError('LocationCondition cannot be passed through to the service')

    def distance_to_feature(self, loc: Point2) -> float:
        if len(self.feature) == 1:
            return loc.distance_to(self.feature[0])
        return min(_segment_distance(loc, a, b) for a, b in zip(self.feature, self.feature[1:]))

    def evaluate_location(self, loc: Point2) -> bool:
        return self.distance_to_feature(loc) <= self.max_distance


Condition = Union[AttributeCondition, LocationCondition]


class AggregateKind(Enum):
    """
    Supported aggregate functions.
    """

    COUNT = 'COUNT'
    """
    Number of qualifying tuples
    """

    SUM = 'SUM'
    """
    Sum of a numeric attribute over qualifying tuples
    """

    AVG = 'AVG'
    """
    SUM / COUNT computed from the same samples; a ratio estimator, hence not unbiased
    """


@dataclass(frozen=True)
class AggregateSpec:
    """
    An aggregate query: SELECT kind(attr) FROM D WHERE condition.
    """

    kind: AggregateKind
    """
    The aggregate function
    """

    attr: Optional[str] = None
    """
    Aggregated attribute; required for SUM and AVG
    """

    condition: Optional[Condition] = None
    """
    Optional selection condition, pass-through or post-filter
    """

    def __post_init__(self):
        if self.kind in (AggregateKind.SUM, AggregateKind.AVG) and not self.attr:
            raise ValueError(f'{self.kind.value} requires an attribute')

    def pass_through_condition(self) -> Optional[AttributeCondition]:
        """
        Gets the condition to hand to the service, if the condition can be passed through.
        """
        if isinstance(self.condition, AttributeCondition) and self.condition.pass_through:
            return self.condition
        return None

    def needs_location(self) -> bool:
        return isinstance(self.condition, LocationCondition)

    def qualifies(self, t_id: str, attrs: Mapping[str, Any], loc: Optional[Point2] = None) -> bool:
        """
        Evaluates the selection condition on one tuple. Pass-through conditions were already applied by
        the service but are re-checked for safety; location conditions need a known or inferred location.
        """
        if self.condition is None:
            return True
        if isinstance(self.condition, LocationCondition):
            if loc is None:
                raise ValueError(f'Location of tuple {t_id} is needed to evaluate the condition')
            return self.condition.evaluate_location(loc)
        return self.condition.evaluate(attrs, t_id)

    def measure(self, t_id: str, attrs: Mapping[str, Any]) -> float:
        """
        Gets the value a qualifying tuple contributes: 1 for COUNT, the attribute for SUM and AVG.
        """
        if self.kind == AggregateKind.COUNT:
            return 1.0
        if self.attr not in attrs:
            raise UnknownAttributeError(self.attr, t_id)
        value = float(attrs[self.attr])
        if not math.isfinite(value):
            raise ValueError(f'Attribute {self.attr} of tuple {t_id} is not a finite number')
        return value


def _segment_distance(p: Point2, a: Point2, b: Point2) -> float:
    dx, dy = b.x - a.x, b.y - a.y
    length_sq = dx * dx + dy * dy
    if length_sq == 0.0:
        return p.distance_to(a)
    t = max(0.0, min(1.0, ((p.x - a.x) * dx + (p.y - a.y) * dy) / length_sq))
    return math.hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy))
