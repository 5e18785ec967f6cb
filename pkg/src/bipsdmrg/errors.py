"""Exception classes raised across the package."""


class BipsError(Exception):
    """Base class for all package errors."""


# tensors
class IncompatibleIndex(BipsError):
    pass


class RankError(BipsError):
    pass


class EmptySpectrum(BipsError):
    pass


class NoConvergence(BipsError):
    def __init__(self, max_iterations, residuals=None):
        self.max_iterations = max_iterations
        self.residuals = residuals
        super().__init__(
            f"eigensolver did not converge in {max_iterations} iterations"
            + ("" if residuals is None else f" (residuals {residuals})")
        )


# integrals / mean field
class MalformedHeader(BipsError):
    pass


class IndexOutOfRange(BipsError):
    pass


class DuplicateConflict(BipsError):
    pass


class ScfNoConvergence(BipsError):
    def __init__(self, iterations, last_error):
        self.iterations = iterations
        self.last_error = last_error
        super().__init__(f"SCF not converged after {iterations} cycles (error {last_error:.3e})")


# mps
class ZeroNorm(BipsError):
    pass


class ShapeMismatch(BipsError):
    pass


# embedding
class NonSymmetricRdm(BipsError):
    pass


class NonIntegerElectronCount(BipsError):
    pass


# bips
class EmptyBasis(BipsError):
    pass


class OrderMismatch(BipsError):
    pass


class UnreachableSector(BipsError):
    def __init__(self, target, nearest):
        self.target = target
        self.nearest = list(nearest)
        super().__init__(f"target sector {target} unreachable; nearest achievable: {self.nearest}")


class FragmentError(BipsError):
    """Wraps an error raised while processing one fragment."""

    def __init__(self, fragment_id, cause):
        self.fragment_id = fragment_id
        self.cause = cause
        super().__init__(f"fragment {fragment_id}: {type(cause).__name__}: {cause}")


# spin
class InconsistentSpinLabels(BipsError):
    pass


# analysis
class ThresholdOutOfRange(BipsError):
    pass


class InvalidLabel(BipsError):
    pass


# fci
class BasisTooLarge(BipsError):
    pass


class TooLarge(BipsError):
    pass


class ConfigError(BipsError):
    pass
