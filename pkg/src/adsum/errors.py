class AdsumError(Exception):
    """Base class for validation errors (CLI exit code 1)."""


class ManifestError(AdsumError):
    pass


class TilingError(ManifestError):
    pass


class MappingError(AdsumError):
    pass


class FrameDecodeError(AdsumError):
    pass


class AudioDecodeError(AdsumError):
    pass


class ShapeError(AdsumError, ValueError):
    pass


class TrainingError(AdsumError):
    pass


class CheckpointError(AdsumError):
    pass


class UndefinedMetricError(AdsumError, ValueError):
    """Metric has no defined value for the given input (e.g. single-class labels)."""


class MissingDependencyError(Exception):
    """An external dependency is unavailable (CLI exit code 2)."""


class BackendUnavailableError(MissingDependencyError):
    pass


class ToolchainMissingError(MissingDependencyError):
    pass
