"""Exception types raised across the package.

Every error derives from :class:`LabelSynthError`, which itself subclasses
``ValueError`` so callers that only care about "bad input" can keep catching
that.
"""


class LabelSynthError(ValueError):
    """Base class for all package errors."""


# conic geometry
class TooFewPoints(LabelSynthError):
    pass


class DegenerateFit(LabelSynthError):
    pass


class PointInsideEllipse(LabelSynthError):
    pass


class PointOnEllipse(LabelSynthError):
    pass


class EllipsesOverlap(LabelSynthError):
    pass


class NoConvergence(LabelSynthError):
    pass


class CoincidentAnchors(LabelSynthError):
    pass


class NoSolutionInSegment(LabelSynthError):
    pass


# rim detection
class ImageTooSmall(LabelSynthError):
    pass


class NoRimFound(LabelSynthError):
    pass


# camera / cylinder
class BehindCamera(LabelSynthError):
    pass


class DegenerateView(LabelSynthError):
    pass


class CameraInsideCylinder(LabelSynthError):
    pass


# synthesis
class NoIntersection(LabelSynthError):
    pass


class RegionTooNarrow(LabelSynthError):
    pass


class EmptyTarget(LabelSynthError):
    pass


# retrieval
class EmptyGallery(LabelSynthError):
    pass


class DimensionMismatch(LabelSynthError):
    pass


class EmbeddingParseError(LabelSynthError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


# configuration
class ConfigError(LabelSynthError):
    pass
