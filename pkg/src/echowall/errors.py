"""Exception types shared across the pipeline stages."""


class EchoWallError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EchoWallError):
    """A configuration value is invalid; the message names the offending field."""


class ShapeError(EchoWallError):
    """An array does not have the expected dimensions."""


class MissingInputError(EchoWallError):
    """A required file or directory is absent."""


class EmptyDatasetError(EchoWallError):
    """A dataset-producing operation was asked for zero items."""


class EmptyMaskError(EchoWallError):
    """A mask with at least one foreground pixel was required."""


class GeometryError(EchoWallError):
    """The wall mask does not admit the expected horseshoe geometry."""


class AmbiguousCavityError(GeometryError):
    """More than one background component is an equally good cavity candidate."""


class DegenerateBoundaryError(GeometryError):
    """The endocardial boundary is too short to divide into segments."""


class MissingSegmentError(EchoWallError):
    """An analyzed wall segment has no pixels (or no boundary arc)."""


class DivergenceError(EchoWallError):
    """Training produced a non-finite loss."""


class BootstrapError(EchoWallError):
    """Pseudo labeling was started without any labeled echos."""


class DegenerateTrainingError(EchoWallError):
    """Classifier training data does not contain both classes."""


class StratificationError(EchoWallError):
    """A class has fewer members than the requested number of folds."""
