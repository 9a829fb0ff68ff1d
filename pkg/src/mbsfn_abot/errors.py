"""Exception hierarchy for mbsfn-abot.

Every error carries the process exit code the CLI reports for it.
"""

from __future__ import annotations

# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# BASE
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


class MbsfnError(Exception):
    """Base mbsfn-abot exception."""

    exit_code: int = 1


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# CLI-FACING ERRORS (EXIT_CONFIG = 2, EXIT_PACKING = 3, EXIT_VALIDATION = 4)
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


class ConfigError(MbsfnError):
    """Invalid configuration or command usage (EXIT_CONFIG = 2)."""

    exit_code = 2


class TopologyFormatError(ConfigError):
    """Malformed topology file."""


class PackingInfeasibleError(MbsfnError):
    """A base station could not be placed within the attempt budget (EXIT_PACKING = 3)."""

    exit_code = 3

    def __init__(self, placed: int, requested: int, d_net: float, r_bs: float, attempts: int) -> None:
        self.placed = placed
        self.requested = requested
        self.d_net = d_net
        self.r_bs = r_bs
        self.attempts = attempts
        super().__init__(
            f"placed {placed} of {requested} stations (d_net={d_net}, r_bs={r_bs}); "
            f"station {placed} rejected {attempts} times"
        )


class ValidationFailedError(MbsfnError):
    """Kernel disagrees with the Monte Carlo oracle (EXIT_VALIDATION = 4)."""

    exit_code = 4


# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━
# NUMERIC / MODEL ERRORS
# ━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━━


class EmptyCombiningSetError(MbsfnError):
    """No same-area station lies within d_max of the location."""


class DegenerateScalesError(MbsfnError):
    """Two gamma scale parameters coincide; merge or perturb them first."""


class NumericalInstabilityError(MbsfnError):
    """Closed-form result fell outside [-1e-6, 1 + 1e-6] before clamping."""

    def __init__(self, value: float) -> None:
        self.value = value
        super().__init__(f"outage probability {value!r} outside [0, 1] beyond tolerance")


class ComplexityGuardError(MbsfnError):
    """Weak-composition enumeration would exceed the term budget."""


class CovarianceFactorizationError(MbsfnError):
    """Shadowing covariance lost positive-definiteness during factorization."""


class GridResolutionError(MbsfnError):
    """Numerical convolution did not reach the target accuracy."""
