"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SrikitError(Exception):
    exit_code = 1


class ValidationError(SrikitError, ValueError):
    """Bad input: out-of-domain parameter, malformed file, missing path."""

    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class HorizonError(ValidationError):
    """Requested time lies beyond the recorded or reachable horizon."""


class AssumptionViolation(SrikitError):
    """A standing assumption was observed to fail during a run."""

    exit_code = 3

    def __init__(self, message, assumption=None):
        super().__init__(message)
        self.assumption = assumption


class StabilityError(AssumptionViolation):
    """Iterates exceeded the blow-up bound (boundedness assumption A5)."""

    def __init__(self, message, step=None, norm=None):
        super().__init__(message, assumption="A5")
        self.step = step
        self.norm = norm


class NumericalError(SrikitError):
    exit_code = 4


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap (ill-conditioned input)."""


class GeneratorCapError(NumericalError):
    """Weighted Minkowski combination would exceed the generator cap."""
