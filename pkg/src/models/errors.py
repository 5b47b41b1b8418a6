"""
Exception hierarchy for the impakt solvers
The pipeline maps each family to a process exit status
"""


class ImpaktError(Exception):
    """Base class for every error raised by the package"""


class DomainError(ImpaktError, ValueError):
    """Argument outside the domain of an operation"""


class DegenerateParabolicityError(DomainError):
    """Fenchel transform requested at a curvature z >= gamma_2 (PDE no longer parabolic)"""


class ConfigError(ImpaktError, ValueError):
    """Unparsable or inconsistent experiment config"""

    exit_code = 2


class PreconditionError(ImpaktError):
    """A numerical precondition (CFL, grid alignment, domain size) does not hold"""

    exit_code = 3


class NumericalHealthError(ImpaktError, RuntimeError):
    """A health metric crossed its threshold in strict mode"""

    exit_code = 4
