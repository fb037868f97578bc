"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """A domain object was constructed with values violating its invariants."""


class ConfigError(ValidationError):
    """A simulation or optimizer configuration is invalid."""


class ParseError(ValueError):
    """A scenario or config file does not match the documented schema."""


class EmptyTraceError(ValueError):
    """Metrics were requested for a trace with no samples."""


class NonFiniteStateError(RuntimeError):
    """A simulation was started from a non-finite plant state."""
