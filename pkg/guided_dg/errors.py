"""File for defining errors"""


class GuidedDGError(Exception):
    """Base class for guided-dg errors."""


class InvalidParameter(GuidedDGError):
    """Raised if an invalid parameter is specified."""
    pass


class ConfigError(InvalidParameter):
    """Raised when a config file cannot be read or contains unknown keys."""
    pass


class DimensionTooSmall(InvalidParameter):
    """Raised when the feature dimension cannot host the requested guide-space."""
    pass


class DimensionMismatch(InvalidParameter):
    """Raised when the config, guide-space and dataset disagree on sizes."""
    pass


class InvalidGenSpec(InvalidParameter):
    """Raised when synthetic benchmark parameters violate their invariants."""
    pass


class InvalidWeights(InvalidParameter):
    """Raised when sample weights do not sum to one."""
    pass


class LengthMismatch(InvalidParameter):
    """Raised when paired sequences have different lengths."""
    pass


class NonSquareCost(InvalidParameter):
    """Raised when an assignment cost matrix is not square."""
    pass


class NonConvergence(GuidedDGError):
    """Raised when the guide-space solver misses its tolerances."""
    pass


class InvalidGuideSpace(GuidedDGError):
    """Raised when guide embeddings violate the guide-space invariants."""
    pass


class EmptyBatch(GuidedDGError):
    """Raised when a loss is requested for an empty batch."""
    pass


class UnassignedDomain(GuidedDGError):
    """Raised when a forgery domain in the batch has no guide embedding."""
    pass


class EmptyQueue(GuidedDGError):
    """Raised when neighbours are requested from an empty feature queue."""
    pass


class BatchTooLarge(GuidedDGError):
    """Raised when a batch does not fit in the feature queue."""
    pass


class NotEnoughSamples(GuidedDGError):
    """Raised when there are fewer points than requested clusters."""
    pass


class DegenerateMean(GuidedDGError):
    """Raised when a domain mean feature cancels out to (almost) zero."""
    pass


class SingleClassSplit(GuidedDGError):
    """Raised when AUC is requested for a split containing one class only."""
    pass


class NonFiniteLoss(GuidedDGError):
    """Raised when the training objective becomes NaN or infinite."""
    pass


class DatasetNotFound(GuidedDGError):
    """Raised when a dataset directory or split file is missing."""
    pass
