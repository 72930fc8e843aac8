"""Exception hierarchy shared across the package."""


class GreenlabError(Exception):
    """Base class for all errors raised by greenlab."""


class ParameterDomainError(GreenlabError, ValueError):
    """A parameter value lies outside its admissible domain."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class AllocationDeadlockError(GreenlabError):
    """Biomass is available but no sink can take it."""

    def __init__(self, message, gc=None):
        if gc is not None:
            message = f"GC {gc}: {message}"
        super().__init__(message)
        self.gc = gc


class SequencingError(GreenlabError):
    """Structural development was requested out of order."""


class TargetParseError(GreenlabError, ValueError):
    """Malformed line in a target or parameter file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TargetValidationError(GreenlabError, ValueError):
    """One or more semantic violations in a target set."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class HorizonError(GreenlabError, ValueError):
    """A requested stage lies beyond the simulated horizon."""


class CalibrationFailure(GreenlabError):
    """No optimizer start produced a finite objective."""
