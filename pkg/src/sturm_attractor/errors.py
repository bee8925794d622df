"""Exception hierarchy shared by all stages of the pipeline.

Every exception carries an ``exit_code`` so the command line front end can map
failure classes onto process exit statuses without a lookup table of its own.
"""


class SturmError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 10


# -- expressions ---------------------------------------------------------------

class ExpressionError(SturmError):
    exit_code = 2


class ExpressionSyntaxError(ExpressionError):
    """Malformed expression text; ``position`` is a 0-based character offset."""

    def __init__(self, message, position, text=""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


class UnknownIdentifier(ExpressionError):
    def __init__(self, name, position=None):
        self.name = name
        self.position = position
        where = "" if position is None else f" at position {position}"
        super().__init__(f"unknown identifier {name!r}{where}")


class ArityError(ExpressionError):
    pass


class DomainError(ExpressionError):
    """Evaluation left the domain of an operator or produced a non-finite value."""

    exit_code = 6


class NonDifferentiable(ExpressionError):
    pass


# -- integration -----------------------------------------------------------------

class IntegrationError(SturmError):
    exit_code = 6


class BlowUp(IntegrationError):
    def __init__(self, message, x=None):
        self.x = x
        super().__init__(message)


class StepUnderflow(IntegrationError):
    pass


class PathVanishes(IntegrationError):
    pass


# -- shooting / equilibria -------------------------------------------------------------

class ParabolicityViolated(SturmError):
    exit_code = 2


class NonHyperbolic(SturmError):
    exit_code = 3


class TangencySuspected(NonHyperbolic):
    """A touch of ``p(pi, .)`` without a sign change: likely a non-hyperbolic equilibrium."""


class WindowTooSmall(SturmError):
    exit_code = 6


class NotDissipativeOnProbe(SturmError):
    exit_code = 4


class EigenSolveFailure(SturmError):
    exit_code = 6


# -- Sturm combinatorics -------------------------------------------------------------

class EndpointCollision(NonHyperbolic):
    pass


class MultipleZeroSuspected(SturmError):
    exit_code = 6


class CrosscheckMismatch(SturmError):
    exit_code = 5


# -- simulation ------------------------------------------------------------------

class GridMismatch(SturmError):
    exit_code = 2


class NoConvergence(SturmError):
    exit_code = 7


# -- input ------------------------------------------------------------------------

class ValidationError(SturmError):
    exit_code = 2


class ProblemFileSyntaxError(ValidationError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = "" if path is None else f"{path}:{line}: "
        super().__init__(f"{where}{message}")


class VerificationContradiction(SturmError):
    """A simulated connection that the predicted graph does not allow."""

    exit_code = 8
