"""Exception hierarchy shared across the package.

Three broad families matter to callers (and map to CLI exit codes):
input validation, numerical failures, and IO problems.
"""


class VixVolterraError(Exception):
    """Base class for all package errors."""


class ValidationError(VixVolterraError, ValueError):
    """Invalid inputs: parameters, configs, quote files."""


class NumericalError(VixVolterraError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""

    def __init__(self, message, achieved_tolerance=None):
        super().__init__(message)
        self.achieved_tolerance = achieved_tolerance


class UnsupportedOperationError(VixVolterraError, ValueError):
    """Operation not defined for the given object (e.g. kernel kind)."""


class SingularCovarianceError(NumericalError):
    """Cholesky factorisation failed even after jitter escalation."""


class FeasibilityError(ValidationError):
    """Affine-modulator exponential-moment condition is violated."""


class ContourError(NumericalError):
    """Fourier/Laplace contour leaves the domain of the Levy exponent."""


class ArbitrageError(ValidationError):
    """Option price outside the no-arbitrage band for implied vol."""


class UnstableHedgeError(NumericalError):
    """Hedge linear system is numerically singular."""


class UnsupportedPayoffError(ValidationError):
    """Payoff does not admit the requested treatment (e.g. no bounded derivative)."""


class CalibrationError(VixVolterraError, RuntimeError):
    """All calibration starts failed; diagnostics attached."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
