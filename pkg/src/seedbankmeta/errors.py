"""Exception types shared across the package."""


class RangeError(ValueError):
    """A parameter lies outside its admissible range."""


class DegenerateKError(RangeError):
    """k <= 1 was requested.

    With a single parent candidate per seed there is no redundancy in parent
    choice, real lineages gain no advantage over ghosts, and any finite
    population empties almost surely; the regime the engine targets needs
    k >= 2.
    """


class WindowMismatchError(ValueError):
    """An extinction field does not cover the window an operation needs."""


class MissingPreviousError(ValueError):
    """Occupancy derivation for generation >= 1 requires the previous occupancy."""


class CouplingViolationError(AssertionError):
    """The occupancy process escaped its best-case bound; implementation bug."""


class OccupancySpecError(ValueError):
    """An occupancy profile violates its structural constraints."""


class ScanExhaustedError(RuntimeError):
    """A threshold scan walked past p = 0 without accepting any probe."""


class BudgetExceededError(ValueError):
    """An exact enumeration was requested beyond its configured budget."""
