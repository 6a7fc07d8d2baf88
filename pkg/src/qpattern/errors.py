"""Exception hierarchy for qpattern.

Numerical failures (blow-up, extinction, degenerate estimators) are kept
distinct from usage errors (bad grids, bad configs) so the CLI can map them
to different exit codes: validation errors exit 2, numerical failures exit 3.
"""


class QPatternError(Exception):
    """Base class for all package-specific errors."""


# --- usage / validation -------------------------------------------------

class ValidationError(QPatternError):
    """A configuration or argument violates a documented invariant."""


class ParseError(ValidationError):
    """A config file could not be parsed; carries (key, line, reason) info."""


class GridMismatchError(ValidationError):
    """Two fields (or a field and a manifold) live on different grids."""


class CorruptCheckpointError(ValidationError):
    """Checkpoint digests do not match the manifest, or shapes disagree."""


# --- numerical failures -------------------------------------------------

class NumericalError(QPatternError):
    """Base class for runtime numerical failures (CLI exit code 3)."""


class NonFiniteError(NumericalError):
    """State left the representable range; the drift overflowed.

    Signals blow-up outside the tube: the caller should already have
    killed the trajectory.
    """


class ZeroModeError(NumericalError):
    """A stationary variance was requested for a mode with zero decay rate."""


class NotIrreducibleError(NumericalError):
    """The sub-stochastic matrix is not irreducible as a nonnegative matrix."""


class NoKillingError(NumericalError):
    """The matrix loses no mass anywhere; there is no killed dynamics."""


class StepTooLargeError(NumericalError):
    """The one-step Gaussian kernel is wider than the whole grid span."""


class ExtinctionError(NumericalError):
    """All Fleming-Viot particles died in a single step."""

    def __init__(self, step_index, time, n_particles, message=None):
        self.step_index = step_index
        self.time = time
        self.n_particles = n_particles
        super().__init__(
            message
            or f"all {n_particles} particles died at step {step_index} (t={time:g})"
        )


class NoLinearTailError(NumericalError):
    """No window of the survival curve is log-linear enough to fit."""


class NotStationaryError(NumericalError):
    """First- and second-half ensemble functionals disagree beyond 3 sigma."""


class DegenerateWeightsError(NumericalError):
    """Importance weights collapsed; effective sample size below threshold."""


class NotConvergedError(NumericalError):
    """Relax-and-match did not land on the manifold (outside the basin)."""


class StencilOverflowError(NumericalError):
    """A finite-difference probe state left the isochron basin."""


class PhaseUnwrapError(NumericalError):
    """A phase increment exceeded half a period in one step (dt too coarse)."""


class InsufficientSweepError(ValidationError):
    """A frequency sweep needs at least four sigma values including zero."""
