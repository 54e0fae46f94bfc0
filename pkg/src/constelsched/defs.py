from enum import Enum, IntEnum


class RowTag(IntEnum):
    """Provenance of a constraint row."""
    PREP = 0
    WINDOW = 1
    MEMORY = 2
    COUPLE_ACQ = 3
    COUPLE_DL = 4
    ORDER = 5
    PAIR = 6


COUPLING_TAGS = frozenset({RowTag.COUPLE_ACQ, RowTag.COUPLE_DL})


class CouplingMode(str, Enum):
    INEQUALITY = "le"
    EQUALITY = "eq"


class LpStatus(IntEnum):
    OPTIMAL = 0
    INFEASIBLE = 1
    UNBOUNDED = 2


class BnbStatus(IntEnum):
    OPTIMAL = 0
    INFEASIBLE = 1
    GAP_LIMIT = 2
