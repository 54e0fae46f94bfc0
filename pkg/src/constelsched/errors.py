from __future__ import annotations


class ConstelError(Exception):
    """Base class for all errors raised by constelsched."""


class ConfigurationError(ConstelError, ValueError):
    pass


class ValidationError(ConstelError, ValueError):
    """An Instance or GraphTimeline violates its invariants."""


class SchemaError(ConstelError, ValueError):
    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class InputError(ConstelError, ValueError):
    """Inconsistent dimensions in a LinearProgram."""


class NumericalError(ConstelError, ArithmeticError):
    def __init__(self, message: str, iterations: int = 0, degenerate: int = 0) -> None:
        super().__init__(f"{message} (iterations={iterations}, degenerate pivots={degenerate})")
        self.iterations = iterations
        self.degenerate = degenerate


class InfeasibleError(ConstelError):
    """A model or subproblem has no feasible point."""


class InfeasibleScheduleError(InfeasibleError):
    def __init__(self, kind: str, targets: list[int], message: str = "") -> None:
        text = f"{kind} infeasibility"
        if targets:
            text += f" (targets {targets})"
        if message:
            text += f": {message}"
        super().__init__(text)
        self.kind = kind
        self.targets = targets


class IterationError(ConstelError):
    def __init__(self, agent: int, t: int, message: str) -> None:
        super().__init__(f"agent {agent}, iteration {t}: {message}")
        self.agent = agent
        self.t = t


class OracleRefusal(ConstelError, ValueError):
    pass


class SolverLimitError(ConstelError):
    """Node or time limit reached before any integer solution was found."""
