"""Exception types shared across the simulator."""


class FedSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(FedSimError):
    """Invalid configuration value or experiment precondition."""


class DomainError(FedSimError):
    """Input outside an operation's domain (bad shapes, empty sets, ...)."""


class DivergenceError(FedSimError):
    """Local training produced non-finite parameters or loss."""


class OutputError(FedSimError):
    """Result files could not be written."""
