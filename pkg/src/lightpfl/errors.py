"""Exception types shared across the package."""


class LightPFLError(Exception):
    """Base class for all package errors."""


class ConfigError(LightPFLError, ValueError):
    """Inconsistent model or scenario configuration."""


class InputError(LightPFLError, ValueError):
    """Invalid argument passed to a computation."""


class DomainError(InputError):
    """Argument outside the mathematical domain of a function."""


class ProtocolError(LightPFLError, RuntimeError):
    """Violation of the training protocol (missing or duplicate uploads, ...)."""


class InfeasibleError(LightPFLError, RuntimeError):
    """A round's resource budgets admit no feasible plan."""

    def __init__(self, message, binding=None, client=None):
        super().__init__(message)
        self.binding = binding
        self.client = client


class ParseError(LightPFLError, ValueError):
    """Malformed input file."""
