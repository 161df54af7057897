"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, shape mismatch or impossible layout."""


class UsageError(RuntimeError):
    """An operation was called in a state that does not allow it."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up in weights, gradients or losses."""


class OracleError(RuntimeError):
    """A test oracle could not produce an answer (e.g. unreachable goal)."""
