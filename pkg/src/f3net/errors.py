"""Exception hierarchy shared across the package.

CLI exit-code mapping: usage errors exit 2 (argparse), ``DataError``
subclasses exit 3, ``NonFiniteLossError`` exits 4.
"""


class F3NetError(Exception):
    """Base class for all package errors."""


class DataError(F3NetError):
    """Invalid or inconsistent input data (CLI exit code 3)."""


class EmptyCaseError(DataError):
    """A case was supplied with zero real modalities."""


class GeometryMismatchError(DataError):
    """Volumes or masks disagree on shape or spacing."""


class ShapeError(DataError):
    """Array shape violates an operation's contract."""


class InvalidLabelError(DataError):
    """A label value is outside the valid class range."""


class NonBinaryWMHError(DataError):
    """A WMH mask contains values other than 0 and 1."""


class NoLabelError(DataError):
    """Training-time patch sampling requires a ground-truth label."""


class MissingLabelError(DataError):
    """Dataset evaluation requires every case to carry a label."""


class LayoutError(DataError):
    """A case directory does not follow the expected file layout."""


class CorruptFileError(DataError):
    """A volume file could not be parsed."""


class OutOfRangeEpochError(F3NetError):
    """Epoch outside [0, max_epochs] passed to the LR schedule."""


class NonFiniteLossError(F3NetError):
    """Training produced a NaN/Inf loss (CLI exit code 4)."""


class DegenerateIntensityWarning(UserWarning):
    """Nonzero support has zero variance; normalization fell back to mean-shift."""
