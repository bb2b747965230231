"""Exception types shared across the package."""


class LumpfitError(Exception):
    """Base class for all lumpfit errors."""


class NonFiniteState(LumpfitError):
    """An ODE stage evaluated to NaN/inf (blow-up or bad parameters)."""


class StepLimitExceeded(LumpfitError):
    """Adaptive integrator hit max_steps before reaching t_end."""


class OutOfRange(LumpfitError):
    """A requested sample time lies outside the trajectory span."""


class DimensionMismatch(LumpfitError):
    """Input length does not match the network's input layer."""


class NonFiniteGradient(LumpfitError):
    """A gradient component evaluated to NaN/inf."""


class DivergedFit(LumpfitError):
    """Optimization produced a non-finite loss."""


class MalformedRow(LumpfitError):
    """A data file row failed to parse; message names the line."""


class NonMonotoneTime(LumpfitError):
    """Timestamps in a record are not strictly increasing."""


class EmptyRun(LumpfitError):
    """A record contains fewer than two rows."""


class SpanTooShort(LumpfitError):
    """Record does not span at least one resampling interval."""
