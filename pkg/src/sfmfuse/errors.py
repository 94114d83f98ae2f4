"""Exception hierarchy shared by all pipeline stages."""


class SfmFuseError(Exception):
    """Base class for every error raised by this package."""


# ── Input / file errors ─────────────────────────────────────────────────

class MalformedFile(SfmFuseError):
    pass


class NonFiniteData(SfmFuseError):
    pass


class DanglingTrack(SfmFuseError):
    """A point track references a view with no camera."""


class OutOfBoundsPixel(SfmFuseError):
    pass


class DimensionMismatch(SfmFuseError):
    pass


class MaskDimensionMismatch(DimensionMismatch):
    pass


# ── Geometry errors ─────────────────────────────────────────────────────

class DegenerateConfiguration(SfmFuseError):
    """Point configuration does not determine a unique similarity transform."""


class NonFiniteInput(SfmFuseError):
    pass


class EmptyScene(SfmFuseError):
    pass


class EmptyInput(SfmFuseError):
    pass


class ViewMismatch(SfmFuseError):
    pass


class CountMismatch(SfmFuseError):
    pass


class IndexMismatch(SfmFuseError):
    pass


# ── Robust estimation / segmentation ────────────────────────────────────

class TooFewCorrespondences(SfmFuseError):
    pass


class AllSamplesDegenerate(DegenerateConfiguration):
    """Every RANSAC iteration drew a degenerate sample."""


class ProviderFailure(SfmFuseError):
    """A mask provider could not answer a prompt."""


class InvalidSpec(SfmFuseError):
    pass
