"""Exception and warning types raised across the package."""


class FluxMeasError(Exception):
    """Base class for all package errors."""


class ConfigError(FluxMeasError, ValueError):
    """Invalid or inconsistent run configuration."""


class ContractViolation(FluxMeasError, ValueError):
    """An operation was called with arguments that break its contract."""


class OutOfDomainError(FluxMeasError, ValueError):
    """Coordinate outside the domain on which a potential is defined."""


class SolverFailure(FluxMeasError, RuntimeError):
    """Root bracketing or diagonalization did not produce a valid result."""


class DegenerateError(FluxMeasError, ValueError):
    """Degenerate energy pair or an all-zero outcome density."""


class OrthogonalTrialError(FluxMeasError, ValueError):
    """Energy filtering annihilated the trial state."""


class ImpossibleConditionError(FluxMeasError, ValueError):
    """Conditioning on an outcome pattern of (numerically) zero probability."""


class StepSizeError(FluxMeasError, RuntimeError):
    """Split-step propagation failed its step-halving self-check."""


class AccuracyWarning(UserWarning):
    """A numerical accuracy check did not meet its tolerance."""


class TruncationWarning(AccuracyWarning):
    """Too much norm falls outside the truncated eigenbasis."""


class AmbiguousMaximumWarning(UserWarning):
    """The outcome density maximum sits on a wide plateau."""


class StagnationWarning(UserWarning):
    """Repeated energy filtering stopped reducing the energy variance."""


class UnderflowWarning(UserWarning):
    """A sequence weight fell below the floating point floor and was rescaled."""
