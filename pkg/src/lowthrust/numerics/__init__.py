"""Propagation, Newton solving and continuation shared by all pipeline stages."""

from .continuation import (
    ArclengthResult,
    ContinuationResult,
    ContinuationSchedule,
    ContinuationStall,
    arclength_run,
    continuation_run,
)
from .newton import NewtonResult, NonConvergenceError, fd_jacobian, newton_solve
from .propagate import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    Hyperplane,
    NoEventError,
    PropagationError,
    Trajectory,
    VectorField,
    flow,
    propagate,
    propagate_to_event,
)

__all__ = [
    "ArclengthResult", "ContinuationResult", "ContinuationSchedule", "ContinuationStall", "arclength_run",
    "continuation_run",
    "NewtonResult", "NonConvergenceError", "fd_jacobian", "newton_solve",
    "DEFAULT_ATOL", "DEFAULT_RTOL", "Hyperplane", "NoEventError", "PropagationError",
    "Trajectory", "VectorField", "flow", "propagate", "propagate_to_event",
]
