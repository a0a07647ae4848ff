"""Truncated Burgers-Hopf ensembles and a best-fit statistical closure of their low modes."""
from .calibration import FitFailure, FitResult, error_function, fit_gamma, rms_per_mode_step
from .closure import (
    ClosureConfig,
    ClosureState,
    ValueFunctionCoeffs,
    closure_rhs,
    cost_function,
    entropy,
    integrate_closure,
    m_coeff,
    omega_evolution_step,
    omega_factor,
    value_coeffs,
)
from .ensemble import (
    ExperimentConfig,
    MomentSeries,
    TrialDensity,
    draw_equilibrium_base,
    equilibrium_autocorrelation,
    run_ensemble,
    sample_member,
)
from .spectral import (
    BlowUpError,
    ModelConfig,
    energy,
    hamiltonian,
    integrate_trajectory,
    rk4_step,
    tbh_rhs,
    tbh_rhs_direct,
)

__version__ = "0.1.0"
