from abc import ABC, abstractmethod
from typing import Any, Iterator, Optional


class LyapguardError(Exception):
    """Base class for every error raised by lyapguard."""


class DomainError(LyapguardError, ValueError):
    """A state lies outside the flight domain (gimbal lock or envelope exit)."""


class SingularityError(DomainError):
    """J(eta) cannot be inverted within the configured condition-number cap."""


class InfeasibleMixError(LyapguardError, ValueError):
    """The requested torque/thrust needs a negative squared rotor speed."""


class NonHurwitzError(LyapguardError, ValueError):
    """A matrix expected to be Hurwitz has an eigenvalue with non-negative real part."""


class ScenarioError(LyapguardError, ValueError):
    """A scenario violates its own invariants or the configured robust bounds."""


class TemplateError(LyapguardError, ValueError):
    """The v-bound template coefficients are invalid."""


class OutOfOrderSampleError(LyapguardError, ValueError):
    """A sample arrived with a timestamp earlier than the previous one."""


class MalformedSampleError(LyapguardError, ValueError):
    """A trajectory row could not be decoded.

    Attributes:
        row (int): 1-based data row number (the header is not counted).
    """

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class SimulationAborted(LyapguardError):
    """A run stopped early. Carries the partial log and the diagnostic reason.

    Attributes:
        log: Samples produced before the abort (a TrajectoryLog).
        t (float): Time of the failed step.
        reason (str): Diagnostic message of the underlying error.
    """

    def __init__(self, log: Any, t: float, reason: str):
        super().__init__(f"simulation aborted at t={t:.6f}s: {reason}")
        self.log = log
        self.t = t
        self.reason = reason


class ProverUnavailableError(LyapguardError):
    """The automated prover binary is missing or cannot be executed."""


class FofParseError(LyapguardError, ValueError):
    """Position-annotated failure while reading a first-order conjecture.

    Attributes:
        line (int): 1-based line.
        column (int): 1-based column.
    """

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.message = message
        self.line = line
        self.column = column


class FofLexError(FofParseError):
    """A character sequence outside the token set."""


class FofSyntaxError(FofParseError):
    """A token sequence outside the accepted grammar."""


class FofUnboundVariableError(FofParseError):
    """A variable used without a quantifier binding it.

    Attributes:
        name (str): The unbound variable.
    """

    def __init__(self, name: str, line: int, column: int):
        super().__init__(f"unbound variable {name}", line, column)
        self.name = name


# Interface for trajectory sample producers consumed by the monitor
class SampleSource(ABC):
    """A stream of trajectory samples (recorded CSV, stdin pipe or live simulation)."""

    @abstractmethod
    def samples(self) -> Iterator[Any]:
        """Yields TrajectorySample objects in non-decreasing time order."""
        pass

    @abstractmethod
    def describe(self) -> str:
        """Short human readable description used in logs."""
        pass


# Interface for automated theorem provers
class TheoremProver(ABC):
    def __init__(self, executable: str, extra_args: Optional[list] = None):
        self.executable = executable
        self.extra_args = list(extra_args or [])

    @abstractmethod
    def prove(self, conjecture: Any, timeout: float) -> Any:
        """Runs the prover on a conjecture and returns an SzsResult."""
        pass
