"""Exception hierarchy shared across the package."""


class DriftBlendError(Exception):
    """Base class for all package errors."""


class ConfigError(DriftBlendError):
    """Invalid configuration value or malformed config file."""


class DegenerateRegionError(DriftBlendError):
    """Region landmarks do not span an area (fewer than 3 non-collinear points)."""


class DegenerateTransformError(DriftBlendError):
    """Affine transform is not invertible."""


class DimensionMismatchError(DriftBlendError):
    """Operands do not share the required dimensions."""


class InvalidWeightsError(DriftBlendError):
    """Composite weights are negative or do not sum to 1."""


class ClipLoadError(DriftBlendError):
    """Base class for clip loading failures."""


class MissingInputError(ClipLoadError):
    """A required input file or directory does not exist."""


class FrameIndexGapError(ClipLoadError):
    """Frame indices are not contiguous from 0."""

    def __init__(self, missing_index: int):
        self.missing_index = missing_index
        super().__init__(f"frame index sequence has a gap at index {missing_index}")


class CountMismatchError(ClipLoadError):
    """Landmark record count differs from frame count."""


class UnreadableImageError(ClipLoadError):
    """A frame file exists but cannot be decoded."""


class LandmarkFormatError(ClipLoadError):
    """Landmarks file does not follow the expected JSON schema."""


class ManifestError(DriftBlendError):
    """Manifest is malformed or its digests do not match the written frames."""


class SynthesisError(DriftBlendError):
    """Frame synthesis failed; carries the failing frame index."""

    def __init__(self, frame_index: int, cause: Exception):
        self.frame_index = frame_index
        self.cause = cause
        super().__init__(f"synthesis failed at frame {frame_index}: {cause}")
