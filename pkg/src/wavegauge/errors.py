"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid grid, window, shape or experiment configuration."""


class ContractError(ValueError):
    """An operation was called outside its supported domain."""


class SolverError(RuntimeError):
    """A forward solve blew up or failed to converge."""


class GaugeError(ValueError):
    """A candidate gauge function violates its admissibility constraints."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations or {}
