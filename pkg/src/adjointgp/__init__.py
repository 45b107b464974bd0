"""Forcing inference for linear systems by adjoint reduction.

The package turns the inverse problem "which forcing produced these noisy
readings of the solution?" into an exact Bayesian linear regression: one
adjoint solve per observation functional converts each reading into a linear
functional of the forcing, and a random Fourier feature expansion of the
forcing prior closes the model in conjugate form.  A random-walk sampler over
the same posterior is included as a validation baseline.
"""

from .errors import (
    AdjointGPError,
    ConfigError,
    DomainError,
    GridMismatchError,
    MisspecificationWarning,
    NumericalError,
    SolverError,
    StabilityWarning,
)
from .fields import (
    Field,
    Grid,
    dirac_window,
    field_from_binary,
    field_from_csv,
    field_to_binary,
    field_to_csv,
    inner_product,
    norm,
    window_indicator,
)
from .features import (
    FeatureBasis,
    KernelParams,
    basis_from_json,
    basis_to_json,
    eq_kernel,
    eval_basis,
    feature_vector,
    forcing_from_weights,
    kernel_approx,
    sample_basis,
    sample_prior_forcing,
)
from .ode import OdeParams, OdeSystem, euler_stability_limit, ode_adjoint, ode_forward
from .pde import PdeParams, PdeSystem, cfl_limit, pde_adjoint, pde_forward, sensor_field
from .shift import ShiftParams, ShiftSystem, shift_adjoint, shift_forward
from .inference import (
    ObservationSet,
    PhiMatrix,
    PipelineResult,
    PosteriorQ,
    PIPELINE_STAGES,
    assemble_phi,
    grid_scan,
    ml_estimate,
    nll_score,
    posterior_forcing,
    posterior_from_json,
    posterior_q,
    posterior_to_json,
    predictive_mse,
    predictive_nll,
    run_pipeline,
    sample_posterior_forcing,
)
from .mcmc import (
    ChainConfig,
    ChainDiagnostics,
    ChainResult,
    batch_means_ess,
    chain_diagnostics,
    chain_to_csv,
    gaussian_log_target,
    rw_mh,
    split_rhat,
    tune_proposal_scale,
)
from .config import Config, canonical_text, config_hash, load_config, parse_config
from .experiments import (
    SimulatedData,
    InferenceOutcome,
    McmcOutcome,
    build_heldout,
    build_windows,
    derive_seed,
    load_bundle,
    make_grid,
    make_kernel,
    make_system,
    run_inference,
    run_mcmc,
    run_shift_demo,
    run_sweep,
    save_bundle,
    save_inference,
    save_mcmc,
    scan_hyper,
    simulate_data,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointGPError", "ConfigError", "DomainError", "GridMismatchError",
    "MisspecificationWarning", "NumericalError", "SolverError", "StabilityWarning",
    "Field", "Grid", "dirac_window", "field_from_binary", "field_from_csv",
    "field_to_binary", "field_to_csv", "inner_product", "norm", "window_indicator",
    "FeatureBasis", "KernelParams", "basis_from_json", "basis_to_json",
    "eq_kernel", "eval_basis", "feature_vector", "forcing_from_weights",
    "kernel_approx", "sample_basis", "sample_prior_forcing",
    "OdeParams", "OdeSystem", "euler_stability_limit", "ode_adjoint", "ode_forward",
    "PdeParams", "PdeSystem", "cfl_limit", "pde_adjoint", "pde_forward", "sensor_field",
    "ShiftParams", "ShiftSystem", "shift_adjoint", "shift_forward",
    "ObservationSet", "PhiMatrix", "PipelineResult", "PosteriorQ", "PIPELINE_STAGES",
    "assemble_phi", "grid_scan", "ml_estimate", "nll_score", "posterior_forcing",
    "posterior_from_json", "posterior_q", "posterior_to_json",
    "predictive_mse", "predictive_nll", "run_pipeline",
    "sample_posterior_forcing",
    "ChainConfig", "ChainDiagnostics", "ChainResult", "batch_means_ess",
    "chain_diagnostics", "chain_to_csv", "gaussian_log_target", "rw_mh",
    "split_rhat", "tune_proposal_scale",
    "Config", "canonical_text", "config_hash", "load_config", "parse_config",
    "SimulatedData", "InferenceOutcome", "McmcOutcome", "build_heldout",
    "build_windows", "derive_seed", "load_bundle", "make_grid", "make_kernel",
    "make_system", "run_inference", "run_mcmc", "run_shift_demo", "run_sweep",
    "save_bundle", "save_inference", "save_mcmc", "scan_hyper", "simulate_data",
    "__version__",
]
