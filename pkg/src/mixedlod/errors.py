class MixedLODError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MixedLODError, ValueError):
    pass


class DomainError(MixedLODError, ValueError):
    """A parameter lies outside the admissible range."""


class AlignmentError(MixedLODError):
    """A fine triangle straddles a coefficient or source cell boundary."""

    def __init__(self, message, triangle=None):
        super().__init__(message)
        self.triangle = triangle


class ParseError(MixedLODError, ValueError):
    pass


class AssemblyError(MixedLODError, ArithmeticError):
    pass


class SpaceMismatchError(MixedLODError, TypeError):
    """Operands live in incompatible discrete spaces."""


class RankError(MixedLODError, ArithmeticError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class SolverFailure(MixedLODError, ArithmeticError):
    def __init__(self, message, report=None, context=None):
        super().__init__(message)
        self.report = report
        self.context = context
