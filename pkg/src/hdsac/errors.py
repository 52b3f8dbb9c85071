"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke a documented precondition (shape mismatch, stepping a finished episode, ...)."""


class TrainingDiverged(RuntimeError):
    """Training produced non-finite values or values outside the divergence bound."""


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


class CheckpointError(IOError):
    """Unreadable, corrupt, or version-mismatched checkpoint record."""


class ReplayError(IOError):
    """A recorded stream cannot be read back (bad schema, truncated or
    malformed records) -- sessions, metrics logs, and the like."""
