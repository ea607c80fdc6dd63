"""Exception hierarchy shared across the package."""


class DualSteerError(Exception):
    """Base class for all errors raised by dualsteer."""


# -- model ingestion ---------------------------------------------------------


class ModelFormatError(DualSteerError, ValueError):
    """An SGM file or in-memory model failed validation."""


class MalformedHeader(ModelFormatError):
    pass


class PayloadTruncated(ModelFormatError):
    pass


class VocabularyTooSmall(ModelFormatError):
    pass


class NonFiniteEntries(ModelFormatError):
    pass


class DuplicateLabels(ModelFormatError):
    pass


class DimensionMismatch(DualSteerError, ValueError):
    pass


class KOutOfRange(DualSteerError, ValueError):
    pass


# -- numerical ---------------------------------------------------------------


class NotInDualImage(DualSteerError):
    """A mean-parameter vector has no primal preimage (solver did not converge)."""


class NoMinimizer(DualSteerError):
    """A KL projection onto a hyperplane diverged."""


class SingularSystem(DualSteerError):
    pass


# -- concepts / probes / metrics ---------------------------------------------


class InvalidScheme(DualSteerError, ValueError):
    pass


class NoPairMass(DualSteerError):
    """Counterfactual pairs carry (numerically) zero probability."""


class NotFactorizable(DualSteerError):
    pass


class DegenerateProbe(DualSteerError, ValueError):
    pass


class ZeroDisplacement(DualSteerError):
    pass


# -- steering ----------------------------------------------------------------


class DistributionCollapsed(DualSteerError):
    """Top-1 probability saturated before the termination threshold.

    The partially traced path is attached as ``path`` when available.
    """

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ConfigError(DualSteerError, ValueError):
    pass
