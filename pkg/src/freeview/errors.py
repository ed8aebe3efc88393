"""Exception types raised across the pipeline."""


class FreeviewError(Exception):
    """Base class for all library errors."""


class MalformedFile(FreeviewError):
    pass


class MissingProperty(MalformedFile):
    """A required PLY property is absent; the message names it."""


class EmptyScene(FreeviewError):
    pass


class UnsupportedCameraModel(FreeviewError):
    pass


class PoseCountMismatch(MalformedFile):
    pass


class ResolutionTooSmall(FreeviewError):
    pass


class DegenerateBounds(FreeviewError):
    pass


class EmptyGrid(FreeviewError):
    pass


class DegenerateLookAt(FreeviewError):
    pass


class NoReferenceAvailable(FreeviewError):
    pass


class InsufficientNeighbors(FreeviewError):
    pass


class ShapeMismatch(FreeviewError):
    pass


class MissingPrerequisite(FreeviewError):
    """A pipeline stage ran before the sidecar it needs exists."""


class ConfigParse(FreeviewError):
    """Configuration file is malformed; message carries section/field."""
