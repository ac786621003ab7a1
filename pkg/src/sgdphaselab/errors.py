"""Exception hierarchy shared by the library and the CLI.

``InputError`` covers everything the caller can fix by changing inputs
(CLI exit code 2); ``DomainError`` covers well-formed inputs for which the
requested analysis is undefined (CLI exit code 3).
"""

from __future__ import annotations


class SgdPhaseLabError(Exception):
    """Base class for all sgdphaselab errors."""


class InputError(SgdPhaseLabError, ValueError):
    """Invalid user input: parameters, files, sizes."""


class SpectrumError(InputError):
    """Spectrum cannot be built, parsed or fitted."""


class ResourceError(InputError):
    """Problem too large for the dense code path."""


class PlotError(InputError):
    """Data cannot be drawn on the requested axes."""


class DomainError(SgdPhaseLabError, ArithmeticError):
    """Analysis undefined for otherwise valid inputs."""


class AnalysisDomainError(DomainError):
    """Context violates the assumptions of the generating-function analysis."""


class NoRootError(DomainError):
    """A monotone equation has no solution in its bracket."""


class NotDivergentError(DomainError):
    pass


class NotConvergentError(DomainError):
    pass


class BoundaryCaseError(DomainError):
    """Phase boundary or Gamma pole, where no constant is defined."""


class NotApplicableError(DomainError):
    pass


class NoStationaryStateError(DomainError):
    pass


class UndefinedRatioError(DomainError):
    pass


class NumericalError(DomainError):
    """A numpy/scipy routine failed on inputs that passed validation."""
