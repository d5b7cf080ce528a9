"""Exception hierarchy shared by every fedfleet area."""

from typing import Any, Dict, Optional


class FedFleetError(Exception):
    """Base class for all errors raised by fedfleet."""

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.context: Dict[str, Any] = dict(context or {})

    def to_record(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "context": self.context,
        }


class ConfigurationError(FedFleetError):
    """Raised for invalid experiment, task or scheme configuration."""


class ContractViolation(FedFleetError):
    """Raised when a caller breaks an operation's precondition."""


class NumericError(FedFleetError):
    """Raised when a computation produces or consumes non-finite values."""


class UndefinedTestError(FedFleetError):
    """Raised when a statistical test is undefined for the given data."""
