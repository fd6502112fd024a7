"""Closed-form TDOA/FDOA localization of a moving source from N+1 sensors."""

from .baselines import BaselineResult, gauss_newton_ml, ho_xu_tswls
from .crlb import CrlbReport, crlb, crlb_report, measurement_jacobian, predicted_cov, small_noise_check
from .errors import ClearError
from .estimator import ClearOptions, EstimationResult, clear_estimate
from .model import (
    MeasurementSet,
    NoiseSpec,
    SensorArray,
    SourceState,
    build_covariance,
    ml_cost,
    sample_measurements,
    true_fdoa,
    true_measurements,
    true_tdoa,
)
from .polyelim import QuadraticPair, QuarticPoly, recover_vdot, real_positive_roots, sylvester_quartic
from .sim import Scenario, preset, run_trials, summarize

__all__ = [
    "BaselineResult", "ClearError", "ClearOptions", "CrlbReport", "EstimationResult",
    "MeasurementSet", "NoiseSpec", "QuadraticPair", "QuarticPoly", "Scenario", "SensorArray",
    "SourceState", "build_covariance", "clear_estimate", "crlb", "crlb_report",
    "gauss_newton_ml", "ho_xu_tswls", "measurement_jacobian", "ml_cost", "predicted_cov",
    "preset", "real_positive_roots", "recover_vdot", "run_trials", "sample_measurements",
    "small_noise_check", "summarize", "sylvester_quartic", "true_fdoa", "true_measurements",
    "true_tdoa",
]
