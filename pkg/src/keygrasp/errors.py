"""Exception hierarchy. Every category carries a stable code reused as the CLI exit status."""


class KeygraspError(Exception):
    """Base class for all package errors."""

    code = 1


class InvalidArgumentError(KeygraspError):
    """A precondition on an operation's inputs was violated."""

    code = 2


class DataIOError(KeygraspError):
    """A referenced file could not be read or written."""

    code = 3


class BadMagicError(KeygraspError):
    """Binary file does not start with the expected magic bytes."""

    code = 4


class BadVersionError(KeygraspError):
    """Binary file carries an unsupported format version."""

    code = 5


class TruncatedFileError(KeygraspError):
    """Binary file ends before the payload its headers promise."""

    code = 6


class VocabularyError(KeygraspError):
    """An affordance label is not part of the manifest's class vocabulary."""

    code = 7


class AlignmentError(KeygraspError):
    """Prediction records do not line up with the manifest's sample ids."""

    code = 8


class TrainingDivergedError(KeygraspError):
    """Training produced a non-finite loss; `epoch` names the failing epoch."""

    code = 9

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


class DegenerateGeometryError(KeygraspError):
    """A keypoint triple is (near-)collinear; `stage` names the failing step."""

    code = 10

    def __init__(self, message, stage="geometry"):
        super().__init__(message)
        self.stage = stage


class InvalidModelError(KeygraspError):
    """Hand model lengths violate the strict triangle inequality or positivity."""

    code = 11


class InsufficientCandidatesError(KeygraspError):
    """Fewer than three candidate keypoints are available for selection."""

    code = 12


class EmptyPrototypeError(KeygraspError):
    """No usable activation support for prototype extraction."""

    code = 13


class InvalidDepthError(KeygraspError):
    """Depth lookup hit an invalid (zero) measurement with no usable neighborhood."""

    code = 14


class NumericError(KeygraspError):
    """A numeric routine encountered a non-finite or otherwise unusable value."""

    code = 15


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit status (1 for anything foreign)."""
    if isinstance(exc, KeygraspError):
        return exc.code
    return 1
