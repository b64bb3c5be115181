"""Exception hierarchy shared by every needlesim module."""


class NeedleSimError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(NeedleSimError):
    """Malformed input file. Carries a line number when one is known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedFormat(NeedleSimError):
    """Input is recognizable but uses a feature outside the supported subset."""


class TruncatedData(NeedleSimError):
    """Payload shorter (or longer) than the header promises."""


class InconsistentSeries(NeedleSimError):
    """DICOM files in one directory do not form a single coherent series."""


class EmptyMesh(NeedleSimError):
    """Mesh file parsed fine but contains no triangles."""


class InvalidArgument(NeedleSimError, ValueError):
    """Caller passed a value outside an operation's documented domain."""


class UnknownPreset(NeedleSimError):
    """Color scheme name is not one of the shipped presets."""


class DegenerateLandmarks(NeedleSimError):
    """Landmark pairs coincide or collapse under orthonormalization."""


class UnknownLayer(NeedleSimError):
    """Layer name does not exist in the anatomy model."""


class InvalidDepth(NeedleSimError):
    """Requested insertion depth exceeds the needle length or is negative."""


class UnknownId(NeedleSimError):
    """Referenced plane/needle/session id does not exist."""


class Conflict(NeedleSimError):
    """Optimistic-concurrency revision check failed."""


class UnsupportedVersion(NeedleSimError):
    """Session file schema version is newer than this build understands."""


class NonUniformSpacing(UserWarning):
    """DICOM slice gaps deviate from the median by more than the tolerance.

    Issued as a warning: the series still loads, with the median gap used
    as the inter-slice spacing.
    """
