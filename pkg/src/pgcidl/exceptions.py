"""Exception hierarchy shared by every pgcidl module."""


class PGCIDLError(Exception):
    """Base class for all errors raised by pgcidl."""


class DimensionError(PGCIDLError, ValueError):
    """Array shapes or feature dimensions do not agree."""


class InvalidInputError(PGCIDLError, ValueError):
    """Input values violate a documented precondition (non-finite, negative...)."""


class ConfigError(PGCIDLError, ValueError):
    """A configuration object is inconsistent."""


class FormatError(PGCIDLError, ValueError):
    """A bag file, manifest or checkpoint could not be decoded."""


class SplitError(PGCIDLError, ValueError):
    """A dataset cannot be split as requested."""


class GroupingError(PGCIDLError, ValueError):
    """Latent grouping was asked for on too few instances."""


class DegenerateMetricError(PGCIDLError, ValueError):
    """The metric factor is identically zero and cannot be renormalized."""


class UndefinedMetricError(PGCIDLError, ValueError):
    """An evaluation metric is undefined for the given labels."""


class NumericalError(PGCIDLError, ArithmeticError):
    """Training produced a non-finite value."""
