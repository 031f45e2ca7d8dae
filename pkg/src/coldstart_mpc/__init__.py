"""Predictive cold-start scheduling for serverless functions.

Modules
-------
workload    arrival traces: loading, synthetic bursts, binning
forecast    quadratic trend + Fourier harmonics with statistical clipping
controller  receding-horizon planner over prewarm, reclaim and dispatch
simcore     discrete-event platform model and actuators
policies    mpc, default and prewarm policies plus the scenario runner
metrics     latency decomposition, percentiles, comparisons
cli         experiment runner
"""

from .controller import (
    ControlPlan,
    ControllerState,
    MpcParams,
    brute_force_solve,
    build_problem,
    control_tick,
    evaluate_cost,
    solve,
    verify_plan,
)
from .forecast import ForecastConfig, ForecastResult, forecast, predict
from .policies import make_policy, run_scenario
from .simcore import PlatformConfig, Simulator
from .workload import ArrivalTrace, SyntheticParams, bin_arrivals, generate_synthetic, load_trace

__version__ = "0.1.0"

__all__ = [
    "ArrivalTrace",
    "ControlPlan",
    "ControllerState",
    "ForecastConfig",
    "ForecastResult",
    "MpcParams",
    "PlatformConfig",
    "Simulator",
    "SyntheticParams",
    "bin_arrivals",
    "brute_force_solve",
    "build_problem",
    "control_tick",
    "evaluate_cost",
    "forecast",
    "generate_synthetic",
    "load_trace",
    "make_policy",
    "predict",
    "run_scenario",
    "solve",
    "verify_plan",
]
