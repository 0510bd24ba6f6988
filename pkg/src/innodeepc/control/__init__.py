"""Predictive controllers, the QP solver and the closed-loop simulator."""

from .closed_loop import ClosedLoopLog, initial_inputs, run_closed_loop
from .controllers import (ControllerConfig, InnoDeePC, RegDeePC, SinusoidReference, SpcControl,
                          SskfMpc, StepResult, affine_map, solve_tracking, tracking_qp,
                          unconstrained_solution)
from .qp import QpProblem, QpResult, box_constraints, kkt_residuals, solve_qp

__all__ = [
    "ClosedLoopLog", "initial_inputs", "run_closed_loop", "ControllerConfig", "InnoDeePC",
    "RegDeePC", "SinusoidReference", "SpcControl", "SskfMpc", "StepResult", "affine_map",
    "solve_tracking", "tracking_qp", "unconstrained_solution", "QpProblem", "QpResult",
    "box_constraints", "kkt_residuals", "solve_qp",
]
