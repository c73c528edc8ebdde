import threading

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional


class QueryPhase(Enum):
    """
    What a kNN query was spent on; every issued query is charged to exactly one phase.
    """

    INIT = 'init'
    """
    Fast-initialization corner queries and the seed queries of an LNR cell
    """

    VERTEX_TEST = 'vertex_test'
    """
    Queries at candidate cell vertices
    """

    BINARY_SEARCH = 'binary_search'
    """
    Queries issued while searching for an edge of an LNR cell
    """

    MC_TRIAL = 'mc_trial'
    """
    Monte-Carlo membership trials inside an upper-bound region
    """

    SAMPLE = 'sample'
    """
    The query at a sampled location that starts each estimator sample
    """


class BudgetExhaustedError(Exception):
    """
    Error raised when a query would exceed the configured query budget. The query is not issued.
    """
    def __init__(self, budget: int):
        super().__init__(f'Query budget of {budget} queries exhausted')
        self.budget = budget


@dataclass(frozen=True)
class LedgerSnapshot:
    """
    Immutable copy of a ledger's counters at one point in time.
    """

    issued: int = 0
    """
    Total queries issued
    """

    by_phase: Dict[QueryPhase, int] = field(default_factory=dict)
    """
    Queries issued per phase; phases with no queries are omitted
    """

    def phase(self, phase: QueryPhase) -> int:
        return self.by_phase.get(phase, 0)

    def __sub__(self, other: 'LedgerSnapshot') -> 'LedgerSnapshot':
        by_phase = {phase: self.phase(phase) - other.phase(phase) for phase in QueryPhase}
        return LedgerSnapshot(self.issued - other.issued, {p: n for p, n in by_phase.items() if n})

    def __add__(self, other: 'LedgerSnapshot') -> 'LedgerSnapshot':
        by_phase = {phase: self.phase(phase) + other.phase(phase) for phase in QueryPhase}
        return LedgerSnapshot(self.issued + other.issued, {p: n for p, n in by_phase.items() if n})

    def to_dict(self) -> Dict[str, int]:
        result = {phase.value: self.phase(phase) for phase in QueryPhase}
        result['issued'] = self.issued
        return result


class QueryLedger:
    """
    Thread-safe accounting of oracle calls. The invariant issued == sum of per-phase counts always holds,
    and with a budget set, issued never exceeds it: a charge that would overflow raises instead.
    """
    def __init__(self, budget: Optional[int] = None):
        """
        :param budget: optional maximum number of queries; None for unlimited
        """
        if budget is not None and budget < 0:
            raise ValueError(f'budget must be >= 0; got {budget}')
        self.budget = budget
        self.issued = 0
        self.by_phase: Dict[QueryPhase, int] = {}
        self._lock = threading.Lock()

    def charge(self, phase: QueryPhase, count: int = 1):
        """
        Records queries against a phase, atomically checking the budget first.

        :param phase: what the queries are spent on
        :param count: number of queries to record
        """
        with self._lock:
            if self.budget is not None and self.issued + count > self.budget:
                raise BudgetExhaustedError(self.budget)
            self.issued += count
            self.by_phase[phase] = self.by_phase.get(phase, 0) + count

    def remaining(self) -> Optional[int]:
        with self._lock:
            return None if self.budget is None else self.budget - self.issued

    def is_exhausted(self) -> bool:
        remaining = self.remaining()
        return remaining is not None and remaining <= 0

    def snapshot(self) -> LedgerSnapshot:
        with self._lock:
            return LedgerSnapshot(self.issued, dict(self.by_phase))

    def delta(self, since: LedgerSnapshot) -> LedgerSnapshot:
        """
        Gets the queries issued since an earlier snapshot of this ledger.
        """
        return self.snapshot() - since
