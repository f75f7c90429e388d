"""
AmbiVer exception classes.
"""


class AmbiVerError(Exception):
    """Base exception for AmbiVer errors."""

    pass


class BBoxOutOfBoundsError(AmbiVerError):
    """Raised when a detection's box center falls outside the image."""

    pass


class MissingIntrinsicsError(AmbiVerError):
    """Raised when a scene has no camera intrinsics."""

    pass


class EmptyStreamError(AmbiVerError):
    """Raised when keyframe selection receives no poses."""

    pass


class EmptyInstructionError(AmbiVerError):
    """Raised when an instruction is empty after trimming."""

    pass


class LengthMismatchError(AmbiVerError):
    """Raised when parallel detection and ray lists differ in length."""

    pass


class IndexOutOfRangeError(AmbiVerError):
    """Raised when an edge references a node that does not exist."""

    pass


class EmptyGroupError(AmbiVerError):
    """Raised when a score is requested for an empty instance group."""

    pass


class ShapeMismatchError(AmbiVerError):
    """Raised when color, depth and intrinsics disagree on image size."""

    pass


class EmptyCloudError(AmbiVerError):
    """Raised when a BEV is requested for an empty point cloud."""

    pass


class MissingKeyframeError(AmbiVerError):
    """Raised when a candidate references a keyframe that is not available."""

    pass


class UnparseableVerdictError(AmbiVerError):
    """Raised when a backend response carries no usable verdict."""

    pass


class BackendUnavailableError(AmbiVerError):
    """Raised when the reasoning backend fails after all retries."""

    pass


class MalformedTripleError(AmbiVerError):
    """Raised when an annotation triple does not carry three labels."""

    pass


class UnknownIdError(AmbiVerError):
    """Raised when a prediction references an unknown instruction."""

    pass


class DuplicatePredictionError(AmbiVerError):
    """Raised when an instruction is predicted more than once."""

    pass


class MissingFileError(AmbiVerError):
    """Raised when an expected benchmark or scene file is missing."""

    pass


class SchemaViolationError(AmbiVerError):
    """Raised when a benchmark record does not match the schema."""

    pass


class PlacementFailureError(AmbiVerError):
    """Raised when synthetic objects cannot be placed without overlap."""

    pass


class InsufficientSceneError(AmbiVerError):
    """Raised when no instruction template fits a synthetic scene."""

    pass


class IoFailureError(AmbiVerError):
    """Raised when a report or artifact cannot be written."""

    pass
