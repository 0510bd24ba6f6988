"""Monte Carlo studies and report emission."""

from .metrics import band, control_costs, log_slope, r_squared
from .studies import (CONTROLLERS, PREDICTORS, ExperimentConfig, aggregate, mean_of,
                      run_control_study, run_prediction_study, run_seed, run_single_control,
                      run_stability_demo, smoke_config)

__all__ = [
    "band", "control_costs", "log_slope", "r_squared", "CONTROLLERS", "PREDICTORS",
    "ExperimentConfig", "aggregate", "mean_of", "run_control_study", "run_prediction_study",
    "run_seed", "run_single_control", "run_stability_demo", "smoke_config",
]
