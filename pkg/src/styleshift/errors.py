"""Exception hierarchy shared by every module."""


class StyleShiftError(Exception):
    """Base class for all toolkit errors."""


class FormatError(StyleShiftError):
    """Unsupported or malformed image format."""


class ContractError(StyleShiftError):
    """A precondition on shapes, channels, or pairings was violated."""


class ArgumentError(StyleShiftError):
    """A plain bad argument (out of range, empty input, ...)."""


class RegistryConflictError(StyleShiftError):
    """Duplicate registration under the same name."""


class RegistryFrozenError(StyleShiftError):
    """Registration attempted after the registry was frozen."""


class UnknownAlgorithmError(StyleShiftError):
    """Dispatch requested for a name that is not registered."""

    def __init__(self, name, available):
        self.name = name
        self.available = sorted(available)
        super().__init__(
            f"unknown algorithm {name!r}; available: {', '.join(self.available)}"
        )


class ExtensionPointError(StyleShiftError):
    """A registered extension name with no built-in implementation."""


class DivergenceError(StyleShiftError):
    """Optimization produced a non-finite loss."""

    def __init__(self, message, iteration=None, scale=None):
        self.iteration = iteration
        self.scale = scale
        super().__init__(message)


class CheckpointIntegrityError(StyleShiftError):
    """Checkpoint file is corrupt or truncated."""


class CheckpointCompatibilityError(StyleShiftError):
    """Checkpoint does not match the expected algorithm or layout."""


class UnsupportedDirectionError(StyleShiftError):
    """The model was not trained for the requested translation direction."""


class StageError(StyleShiftError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[stage: {stage}] {cause}")
