"""Exception hierarchy shared across the package.

Every error raised by cathlab derives from :class:`CathlabError` so callers
(and the CLI/service shells) can separate data-validation failures from
genuine bugs.
"""


class CathlabError(Exception):
    """Base class for all cathlab errors."""


class ValidationError(CathlabError):
    """Input data violates a documented precondition or invariant."""


class GeometryError(CathlabError):
    """Geometric operation cannot be carried out."""


class DegeneratePoseError(GeometryError):
    """View direction is parallel to the gantry axis; azimuth undefined."""


class ProjectionDegenerateError(GeometryError):
    """Point lies on the source plane; pinhole projection undefined."""


class MeshError(ValidationError):
    """Mesh fails a structural requirement (indices, closedness, orientation)."""


class FileFormatError(ValidationError):
    """File is malformed or inconsistent with its metadata."""


class InsufficientDataError(ValidationError):
    """Not enough samples/peaks/points to perform the computation."""


class MatchingError(CathlabError):
    """Stereo correspondence search failed."""
