"""Exception types shared across the solver stack.

Everything raised on purpose derives from :class:`OTGError`, so callers can
catch one base class at the CLI boundary and map it to an exit code.
"""

from __future__ import annotations


class OTGError(Exception):
    """Base class for all errors raised by this package."""


class OutOfBounds(OTGError):
    """A node multi-index lies outside the lattice."""


class NotAnEdge(OTGError):
    """A node pair is not an edge of the lattice graph."""


class NotNeighbors(OTGError):
    """Two nodes passed to an edge-local operation are not adjacent."""


class DimensionMismatch(OTGError):
    """An analytic density or velocity formula does not fit the grid dimension."""


class NonFiniteValue(OTGError):
    """A density evaluation produced NaN or infinity."""


class GridMismatch(OTGError):
    """Two fields that must share a grid were built on different grids."""


class KindMismatch(OTGError):
    """A homotopy kind was combined with density specs it cannot interpolate."""


class NonFiniteState(OTGError):
    """A phase-space state contains NaN or infinity."""


class LinearSolveSingular(OTGError):
    """The per-step implicit density update could not be solved."""


class TrajectoryBlowUp(OTGError):
    """An initial value problem left the finite/bounded regime before its end time.

    Attributes:
        t_fail: time at which the guard tripped.
        subinterval: shooting subinterval index, when known.
    """

    def __init__(self, t_fail: float, subinterval: int | None = None):
        self.t_fail = float(t_fail)
        self.subinterval = subinterval
        where = f" in subinterval {subinterval}" if subinterval is not None else ""
        super().__init__(f"trajectory blew up at t={t_fail:.6g}{where}")


class JacobianSingular(OTGError):
    """The shooting Jacobian factorization failed or a pivot underflowed."""


class JacobianIncomplete(OTGError):
    """One or more finite-difference columns could not be integrated."""


class MaxIterationsExceeded(OTGError):
    """Newton did not meet a stopping criterion within the iteration budget."""


class ContinuationStalled(OTGError):
    """The homotopy driver ran out of step shrinks before reaching the target.

    Attributes:
        last_lambda: largest homotopy parameter that was solved successfully.
        cause: the failure that exhausted the shrink budget.
    """

    def __init__(self, last_lambda: float, cause: Exception | str):
        self.last_lambda = float(last_lambda)
        self.cause = cause
        super().__init__(
            f"continuation stalled at lambda={last_lambda:.6g}: {cause}"
        )


class UnknownExample(OTGError):
    """An example name outside the registered set was requested."""


class ConfigError(OTGError):
    """A run configuration failed validation."""
