"""Robust estimation for beta regression models.

Provides maximum likelihood, surrogate maximum likelihood (reparameterized
L_q-likelihood) and minimum density power divergence estimation for beta
regression with mean and precision submodels, together with sandwich
covariance inference, a data-driven tuning-constant selector, residual
diagnostics with simulated envelopes, and a Monte Carlo robustness harness.
"""

from .exceptions import (
    ConvergenceError,
    DomainError,
    InfeasibleTransformError,
    NonIntegrableError,
    RobustBetaError,
    SingularMatrixError,
    SpecificationError,
)
from .model import ModelSpec, Theta, predict_link_level, q_transform, validity_check
from .estimation import FitResult, fit, loglik, lq_objective, lq_gradient, mdpde_objective
from .inference import sandwich, wald_test, bootstrap_pvalue, influence_curve
from .tuning import TuningConfig, TuningTrace, select_q
from .diagnostics import DiagnosticsReport, residuals_swr2, simulated_envelope, weight_report
from .simulation import ScenarioConfig, MCResult, generate_scenario, run_study, relative_efficiency

__version__ = "0.1.0"

__all__ = [
    "ModelSpec",
    "Theta",
    "FitResult",
    "fit",
    "loglik",
    "lq_objective",
    "lq_gradient",
    "mdpde_objective",
    "predict_link_level",
    "q_transform",
    "validity_check",
    "sandwich",
    "wald_test",
    "bootstrap_pvalue",
    "influence_curve",
    "TuningConfig",
    "TuningTrace",
    "select_q",
    "DiagnosticsReport",
    "residuals_swr2",
    "simulated_envelope",
    "weight_report",
    "ScenarioConfig",
    "MCResult",
    "generate_scenario",
    "run_study",
    "relative_efficiency",
    "RobustBetaError",
    "DomainError",
    "InfeasibleTransformError",
    "NonIntegrableError",
    "ConvergenceError",
    "SingularMatrixError",
    "SpecificationError",
]
