"""Exception types shared across the package."""


class UrbanDiffError(Exception):
    """Base class for all package-specific errors."""


class AlignmentError(UrbanDiffError):
    """Raster layers do not share a common pixel grid."""


class RasterFormatError(UrbanDiffError):
    """A raster file or array violates its format contract."""


class PromptParseError(UrbanDiffError):
    """Prompt text deviates from the template dialect.

    Attributes:
        position: character offset of the offending token, or -1 if unknown.
    """

    def __init__(self, message: str, position: int = -1):
        super().__init__(message)
        self.position = position


class ManifestError(UrbanDiffError):
    """Manifest file missing, unreadable, or schema-violating."""


class InfeasibleTargetsError(UrbanDiffError):
    """Requested density/land-use targets cannot be synthesized."""


class CheckpointError(UrbanDiffError):
    """Checkpoint directory missing, corrupt, or incompatible."""


class EvalError(UrbanDiffError):
    """Metric precondition violated (shape mismatch, empty set, bad features)."""


class AnalysisError(UrbanDiffError):
    """Latent-analysis or experiment precondition violated."""


class ConfigError(UrbanDiffError):
    """Run configuration violates its schema or value constraints.

    Attributes:
        key_path: dotted path of the offending key, e.g. "model.latent_channels".
    """

    def __init__(self, message: str, key_path: str = ""):
        super().__init__(f"{message} ({key_path})" if key_path else message)
        self.key_path = key_path


class JobError(UrbanDiffError):
    """Generation-job lifecycle violation (unknown id, bad transition)."""


class TrainingDivergedError(UrbanDiffError):
    """Training loss became non-finite; carries the offending step context."""

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step
