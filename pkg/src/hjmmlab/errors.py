"""Exception hierarchy shared by all modules."""


class HJMMError(Exception):
    """Base class for all errors raised by hjmmlab."""


class StructuralError(HJMMError, ValueError):
    """Inputs have incompatible shapes, grids or missing companions."""


class DomainError(HJMMError, ValueError):
    """An argument lies outside the domain of an operation."""


class AccuracyError(HJMMError):
    """A Monte Carlo estimate is too noisy for the configured tolerance."""


class ContractViolation(HJMMError):
    """A user-supplied field broke a documented contract (e.g. Y <= 0)."""


class BlowUpError(HJMMError):
    """Simulation produced non-finite or exploding curves."""

    def __init__(self, message, step=None, n_failed=None):
        super().__init__(message)
        self.step = step
        self.n_failed = n_failed


class ConfigError(HJMMError, ValueError):
    """Configuration file failed validation."""

    def __init__(self, message, field=None, line=None):
        loc = ""
        if field is not None:
            loc = f" [field '{field}'"
            loc += f", line {line}]" if line is not None else "]"
        super().__init__(message + loc)
        self.field = field
        self.line = line
