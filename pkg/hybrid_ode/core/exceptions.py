"""Custom exceptions for hybrid ODE modeling."""

from __future__ import annotations

from typing import Any


class HybridError(Exception):
    """Base exception for all hybrid modeling errors."""

    def __init__(self, message: str, error_code: str | None = None) -> None:
        """
        Initialize the exception.

        Args:
            message: Human-readable error message
            error_code: Optional short machine-readable code

        """
        super().__init__(message)
        self.message = message
        self.error_code = error_code

    def __str__(self) -> str:
        """Return string representation of the error."""
        if self.error_code:
            return f"[{self.error_code}] {self.message}"
        return self.message


class ConfigError(HybridError):
    """Exception raised for invalid model, training or run configuration."""


class ShapeError(HybridError):
    """Exception raised when array dimensions or lengths do not agree."""


class InputError(HybridError):
    """Exception raised for empty or otherwise unusable inputs."""


class ContractError(HybridError):
    """Exception raised when an internal API contract is violated."""


class DomainError(HybridError):
    """Exception raised when a value is outside a function's domain."""


class NumericError(HybridError):
    """Exception raised when a computation produces non-finite values."""


class DivergenceError(NumericError):
    """Exception raised when an ODE rollout leaves the finite range."""

    def __init__(self, message: str, step: int | None = None) -> None:
        """
        Initialize the divergence error.

        Args:
            message: Human-readable error message
            step: Euler step index at which the state became non-finite

        """
        super().__init__(message, error_code="divergence")
        self.step = step

    def __str__(self) -> str:
        """Return string representation of the error."""
        if self.step is not None:
            return f"[divergence] step {self.step}: {self.message}"
        return super().__str__()


class DataError(HybridError):
    """Exception raised for malformed data files and invalid datasets."""

    def __init__(
        self,
        message: str,
        line: int | None = None,
        field: str | None = None,
    ) -> None:
        """
        Initialize the data error.

        Args:
            message: Human-readable error message
            line: 1-based line number in the offending file
            field: Name of the offending record field

        """
        super().__init__(message)
        self.line = line
        self.field = field

    def __str__(self) -> str:
        """Return string representation of the error."""
        parts: list[str] = []
        if self.line is not None:
            parts.append(f"line {self.line}:")
        if self.field:
            parts.append(f"field '{self.field}':")
        parts.append(self.message)
        return " ".join(parts)


class TrainingError(HybridError):
    """Exception raised when training cannot make progress."""

    def __init__(
        self,
        message: str,
        diagnostics: dict[str, Any] | None = None,
    ) -> None:
        """
        Initialize the training error.

        Args:
            message: Human-readable error message
            diagnostics: Epoch, learning rate and divergence counters

        """
        super().__init__(message, error_code="training")
        self.diagnostics = diagnostics or {}


class GraphError(HybridError):
    """Exception raised for invalid causal graphs or graph transforms."""
