"""Exception types shared across the package.

Validation errors signal bad inputs (trees, matrices, configs) and map to
exit code 2 in the CLI; numerical failures map to exit code 3.
"""


class TreekernError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(TreekernError):
    """Bad user input: malformed tree, mismatched shapes, bad config."""


class CycleDetected(ValidationError):
    pass


class MultipleRoots(ValidationError):
    pass


class DisconnectedNode(ValidationError):
    pass


class LeafOrderMismatch(ValidationError):
    pass


class UnknownNode(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NotPowerOfTwo(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class EmptyInterior(ValidationError):
    pass


class IndexOutOfTree(ValidationError):
    """A response setting references leaves the configured tree lacks."""


class CholeskyFailed(ValidationError):
    """Requested covariance matrix is not positive semidefinite."""


class NumericalError(TreekernError):
    """Numerical failure during fitting; CLI exit code 3."""


class ZeroDenominator(NumericalError):
    """Every kernel weight underflowed to zero for some query point."""


class OptimizationFailed(NumericalError):
    pass


class AllRestartsFailed(OptimizationFailed):
    pass
