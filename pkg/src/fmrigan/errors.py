"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Data or argument violates a documented invariant."""


class FormatError(ValueError):
    """On-disk file does not match the expected layout."""


class UnsupportedVersionError(FormatError):
    pass


class ConfigError(ValueError):
    """Configuration is inconsistent (bad shapes, bad cross-field values)."""


class TrainingDiverged(RuntimeError):
    """A loss or parameter became non-finite during optimization."""

    def __init__(self, message, step=None, losses=None, param_norms=None, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.losses = losses or {}
        self.param_norms = param_norms or {}
        self.checkpoint = checkpoint
