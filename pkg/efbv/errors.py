"""Exception hierarchy for the EF-BV simulator.

Every error raised on purpose by the package derives from
:class:`EFBVError`, so callers (and the CLI) can catch a single
base class. Subclasses also inherit from the matching builtin
(``ValueError``, ``RuntimeError`` ...) so generic handlers keep
working.
"""

from typing import Any, List, Optional


class EFBVError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(EFBVError, ValueError):
    """Invalid parameters, specs, manifests or combinations."""


class ContractViolation(EFBVError, ValueError):
    """A caller broke a precondition (shape, finiteness)."""


class LibSVMParseError(EFBVError, ValueError):
    """Malformed LibSVM text, with the offending line number."""

    def __init__(self, line_number: int, message: str) -> None:
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class EnumerationTooLarge(ConfigurationError):
    """The outcome space of a compressor is too large to enumerate."""

    def __init__(self, count: int, limit: int) -> None:
        self.count = count
        self.limit = limit
        super().__init__(
            f"outcome space has {count} outcomes, "
            f"limit is {limit}"
        )


class DivergenceError(EFBVError, RuntimeError):
    """The iterate blew up; carries the partial trace."""

    def __init__(
        self,
        t: int,
        gamma: float,
        records: Optional[List[Any]] = None,
    ) -> None:
        self.t = t
        self.gamma = gamma
        self.records: List[Any] = records or []
        super().__init__(
            f"iterate diverged at round {t} with step size "
            f"gamma={gamma:.6g}"
        )


class NumericalError(EFBVError, ArithmeticError):
    """A NaN or infinity appeared where it should not."""


class MissingReferenceError(EFBVError, RuntimeError):
    """Optimality gaps need a reference solution first."""
