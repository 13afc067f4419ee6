"""Exception types shared across the package."""


class MvContractError(Exception):
    """Base class for all package errors."""


class DomainError(MvContractError):
    """An operation was called outside its mathematical domain."""


class NumericsError(MvContractError):
    """A numeric evaluation produced non-finite or invalid values."""


class ScenarioFormatError(MvContractError):
    """Scenario file is malformed; carries the offending field or line."""


class SolverError(MvContractError):
    """A root finder or eigenvalue solver failed to bracket/converge."""


class IntegrabilityError(MvContractError):
    """An improper integral does not decay (theta2 <= theta0 regime)."""


class StructureError(MvContractError):
    """Coefficients violate a structural precondition (e.g. non-diagonal noise)."""


class BlowUpError(NumericsError):
    """A simulated trajectory left the admissible region."""

    def __init__(self, message, particle=None, step=None):
        super().__init__(message)
        self.particle = particle
        self.step = step


class DegenerateCouplingError(MvContractError):
    """A coupling-dependent ratio had a vanishing denominator."""


class FitError(MvContractError):
    """Decay-curve fitting could not be performed."""
