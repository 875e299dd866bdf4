"""Global yaw parameterization for quadrotor trajectory planning."""

from .splines import BoundaryState, PiecewisePoly, control_effort, solve_min_control
from .traversal import Keyframe, TraversalProblem, Weights, solve_traversal
from .yawparam import SingularityError, YawLimits, heading_rates, normalize_heading
from .yawqp import (
    YawPlanRequest,
    plan_virtual_yaw,
    plan_yaw_unwrapped_baseline,
    plan_yaw_wrapped_baseline,
)

__all__ = [
    "BoundaryState",
    "Keyframe",
    "PiecewisePoly",
    "SingularityError",
    "TraversalProblem",
    "Weights",
    "YawLimits",
    "YawPlanRequest",
    "control_effort",
    "heading_rates",
    "normalize_heading",
    "plan_virtual_yaw",
    "plan_yaw_unwrapped_baseline",
    "plan_yaw_wrapped_baseline",
    "solve_min_control",
    "solve_traversal",
]
