"""Exception types raised by the library."""


class ClCalibError(Exception):
    """Base class for all library errors."""


class InputError(ClCalibError, ValueError):
    """Malformed user input (data files, configs, flags)."""


class DomainError(InputError):
    """Argument outside the support of a distribution."""


class NumericalError(ClCalibError, ArithmeticError):
    """Base class for numerical failures."""


class NonConvergence(NumericalError):
    pass


class DegenerateData(NumericalError):
    """A group has all-zero or all-n event counts, so the maximum is on the boundary."""


class SingularSensitivity(NumericalError):
    pass


class NotSymmetric(NumericalError):
    pass


class NotSPD(NumericalError):
    pass


class ZeroGradient(NumericalError):
    pass


class NonFiniteTarget(NumericalError):
    pass


class InsufficientRecords(ClCalibError, ValueError):
    pass
