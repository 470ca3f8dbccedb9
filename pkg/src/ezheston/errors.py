"""Exception hierarchy shared by all solver modules."""


class EzHestonError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(EzHestonError, ValueError):
    pass


class ZeroDenominator(EzHestonError, ArithmeticError):
    pass


class ValidationFailed(EzHestonError):
    """A solver entry point was called with parameters that fail validation."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(report.messages) or "validation failed")


class DomainError(EzHestonError, ValueError):
    pass


class TerminalSingularity(DomainError):
    pass


class StepTooLarge(EzHestonError, ValueError):
    pass


class InstabilityDetected(EzHestonError, ArithmeticError):
    pass


class AdmissibilityViolation(EzHestonError, ValueError):
    pass


class ConfigError(EzHestonError, ValueError):
    pass
