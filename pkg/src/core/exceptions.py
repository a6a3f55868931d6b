"""Error types raised across the occrec pipeline.

Every data problem derives from OccRecError (and ValueError), which the CLI
maps to exit code 2; ConfigError is a usage error and maps to 1.
"""

from typing import Any, Optional


class OccRecError(ValueError):
    """Base class for data and pipeline errors"""


class ConfigError(OccRecError):
    """Unknown key or invalid value in the configuration (a usage error)"""


class NonFiniteFeatureError(OccRecError):
    def __init__(self, detail: str = ""):
        super().__init__("non-finite feature" + (f": {detail}" if detail else ""))


class FeatureFileError(OccRecError):
    """Malformed feature file: header mismatch, truncation, duplicates"""


class CheckpointError(OccRecError):
    """Malformed or incompatible parameter checkpoint"""


class MaskFormatError(OccRecError):
    """Unreadable PGM / RLE mask"""


class EmptyGalleryError(OccRecError):
    def __init__(self, detail: str = "gallery is empty"):
        super().__init__(detail)


class FullyOccludedQueryError(OccRecError):
    def __init__(self, image_id: str = ""):
        super().__init__("fully occluded query" + (f": {image_id}" if image_id else ""))


class EmptyNeighborhoodError(OccRecError):
    """Reconstruction requested with no neighbors; callers apply the fallback"""


class MissingLabelError(OccRecError):
    """A person_id is required but absent"""


class SynthSpecError(OccRecError):
    """Synthetic dataset specification cannot be satisfied"""


class GradientCheckError(OccRecError):
    """Analytic gradient disagrees with finite differences"""


class TrainingDivergedError(OccRecError):
    """Loss became NaN/Inf; carries the last parameters that produced a finite loss"""

    def __init__(self, message: str, last_good: Optional[Any] = None, epoch: int = -1):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch
