"""Ensemble square root filters, their continuous-time limits and convergence sweeps."""
from .errors import *  # noqa: F401,F403
from .filters import EsrfVariant, FilterTrajectory, analysis_step, forecast_step, run_filter
from .harness import ConvergenceReport, SweepConfig, emit_report, fit_rate, parse_report, run_sweep
from .kalman import KalmanBucyTrajectory, integrate_kalman_bucy, kalman_step, run_kalman
from .limit import LimitTrajectory, integrate_limit, member_gap
from .model import (
    Ensemble,
    LinearDrift,
    LipschitzDrift,
    ObservationPath,
    StateSpaceModel,
    TimeGrid,
    aggregate_increments,
    ensemble_stats,
    simulate_reference,
)
from .perturbations import PerturbationSpec

__version__ = "0.1.0"
