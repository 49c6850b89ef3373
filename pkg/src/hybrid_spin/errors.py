"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class HybridSpinError(Exception):
    exit_code = 1


class ConfigurationError(HybridSpinError, ValueError):
    exit_code = 2


class ContractViolation(HybridSpinError, ValueError):
    exit_code = 3


class NumericalFailure(HybridSpinError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class PositivityViolation(HybridSpinError):
    exit_code = 5


class DegenerateDensity(HybridSpinError):
    exit_code = 6


class NotFactorable(ContractViolation):
    """Raised when a hybrid density is not pointwise rank one."""
