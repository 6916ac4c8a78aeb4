"""Exception types shared across the package.

Each error maps onto one CLI exit code (see ``exit_code``).
"""


class CoulombLabError(Exception):
    exit_code = 1


class ConfigurationError(CoulombLabError, ValueError):
    exit_code = 2


class ContractError(CoulombLabError, ValueError):
    """A precondition of an operation was violated by the caller."""

    exit_code = 2


class InvalidPointError(ContractError):
    pass


class DomainError(ContractError):
    pass


class UnsupportedError(ConfigurationError):
    pass


class AdmissibilityError(CoulombLabError, ValueError):
    exit_code = 3


class InfeasibleError(CoulombLabError, ValueError):
    exit_code = 3


class SingularConfigurationError(ContractError):
    pass


class UnboundedPotentialError(ContractError):
    pass


class NorthPoleMassError(ContractError):
    pass


class DegenerateMeasureError(CoulombLabError, ValueError):
    exit_code = 3


class NonConvergenceError(CoulombLabError, RuntimeError):
    exit_code = 4
