# Exceptions raised by the coarse model toolkit.
# All of them subclass ValueError so callers treating bad input generically keep working.


class CoarseModelError(ValueError):
    pass


class ConfigError(CoarseModelError):
    """Unknown model tag, unknown config key or an option outside its choices."""


class DimensionMismatchError(CoarseModelError):
    pass


class SingularMatrixError(CoarseModelError):
    pass


class NotUnipotentError(CoarseModelError):
    pass


class UnsupportedAlgebraError(CoarseModelError):
    pass


class DegenerateInputError(CoarseModelError):
    pass


class LatticeCollisionError(CoarseModelError):
    """Two distinct lattice words landed within the dedup epsilon with different canonical keys."""


class InfeasibleNetError(CoarseModelError):
    """The lattice is not separated enough to build a net; rescale it first."""


class NonBijectiveError(CoarseModelError):
    pass


class OrbitChartError(CoarseModelError):
    pass


class ChainLinkageError(CoarseModelError):
    pass


class SizeMismatchError(CoarseModelError):
    pass


class NonMetricError(CoarseModelError):
    pass


class DisconnectedQuotientError(CoarseModelError):
    pass
