"""Exception hierarchy shared by all sadca modules."""


class SadcaError(Exception):
    """Base class for errors raised by this package."""


class InputError(SadcaError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class ConfigurationError(SadcaError, ValueError):
    """Inconsistent configuration, e.g. image shape not matching encoder params."""


class NumericalError(SadcaError, ArithmeticError):
    """A computation produced non-finite values."""


class ManifestError(SadcaError, ValueError):
    """A dataset manifest or lexicon file could not be parsed."""


class UndefinedMetricError(SadcaError, ValueError):
    """A metric has an empty denominator (e.g. no clean retrieval was correct)."""
