"""Latent-variable Gaussian graphical model selection by sparse plus low-rank decomposition."""

from .consistency import ConsistencyVerdict, algebraic_consistency, covariance_error, kl_gaussian, parametric_error
from .fisher import FisherDiagnostics, FisherOperator, diagnostics, fisher_apply, omega_gains, t_gains
from .geometry import RankTangentSpace, SupportSpace, geometry_report, incoherence, mu_value, rho, xi_bracket
from .linalg import InputError, NotPositiveDefinite, mvn_sample, psd_inverse, sym_eig
from .lvmodel import (
    LatentVariableModel,
    MarginalDecomposition,
    SampleCovariance,
    build_cycle_model,
    build_grid_model,
    build_model,
    marginalize,
    model_complexity,
    sample_covariance,
)
from .solver import DecompositionEstimate, SolverConfig, fit, gamma_sweep, kkt_residual, lambda_schedule

__version__ = "0.1.0"

__all__ = [
    "ConsistencyVerdict", "DecompositionEstimate", "FisherDiagnostics", "FisherOperator", "InputError",
    "LatentVariableModel", "MarginalDecomposition", "NotPositiveDefinite", "RankTangentSpace",
    "SampleCovariance", "SolverConfig", "SupportSpace", "algebraic_consistency", "build_cycle_model",
    "build_grid_model", "build_model", "covariance_error", "diagnostics", "fisher_apply", "fit",
    "gamma_sweep", "geometry_report", "incoherence", "kkt_residual", "kl_gaussian", "lambda_schedule",
    "marginalize", "model_complexity", "mu_value", "mvn_sample", "omega_gains", "parametric_error",
    "psd_inverse", "rho", "sample_covariance", "sym_eig", "t_gains", "xi_bracket",
]
