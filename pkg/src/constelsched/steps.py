"""
Step-size schedules t -> alpha^t for allocation updates and dual ascent.
"""
from dataclasses import dataclass


@dataclass(frozen=True)
class Harmonic:
    """alpha^t = a / (t + t0): divergent sum, convergent sum of squares."""
    a: float = 1.0
    t0: float = 1.0

    divergent = True
    square_summable = True

    def __post_init__(self) -> None:
        assert self.a > 0, "step scale must be positive"
        assert self.t0 > 0, "step offset must be positive"

    def __call__(self, t: int) -> float:
        return self.a / (t + self.t0)


@dataclass(frozen=True)
class Constant:
    a: float = 0.01

    divergent = True
    square_summable = False

    def __post_init__(self) -> None:
        assert self.a > 0, "step size must be positive"

    def __call__(self, t: int) -> float:
        return self.a


StepSchedule = Harmonic | Constant
