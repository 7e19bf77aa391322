"""Exception types shared across the package."""


class CoupledFlowError(Exception):
    """Base class for all package errors."""


class InvalidMetricError(CoupledFlowError):
    """Metric violates positivity or pole-regularity invariants."""


class NumericError(CoupledFlowError):
    """A derived field came out non-finite.

    Carries the first offending node index when known.
    """

    def __init__(self, message, node=None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class DomainError(CoupledFlowError):
    """Argument outside the operation's admissible domain."""


class ConfigError(CoupledFlowError):
    """Malformed run configuration."""
