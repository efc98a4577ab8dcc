"""Quantum noise of a multimode frequency-comb OPO with orbital angular momentum.

Modules
-------
comb        configuration, pump spectra, phase mismatch and coupling matrix
supermodes  eigen-analysis of the coupling matrix and the oscillation threshold
steady      classical above-threshold solution and field reconstruction
linear      linearized fluctuations and analytic/numeric noise spectra
positivep   positive-P stochastic equations and ensemble integration
analysis    orientation diffusion, dark-mode quadratures and homodyne spectra
cli         command-line entry point
"""

__version__ = "0.1.0"

from .comb import (
    CombConfig,
    ConfigError,
    MismatchModel,
    PumpSpectrum,
    build_coupling_matrix,
    build_mismatch,
    build_pump_spectrum,
    config_from_dict,
    load_config,
    make_config,
)
from .supermodes import SupermodeBasis, below_threshold_spectrum, decompose
from .steady import SteadyState, SteadyStateError, reconstruct_field, solve_steady_state, verify_eigenrelation
from .linear import (
    IdentityCheckError,
    LinearModel,
    NoiseSpectrum,
    analytic_dark_spectra,
    build_linear_model,
    dark_quadrature_vectors,
    numeric_spectrum,
)
from .positivep import (
    EnsembleRun,
    NoiseFactorization,
    PPState,
    RunParams,
    diffusion_factor,
    diffusion_matrix,
    drift,
    run_ensemble,
    step,
)
from .analysis import (
    PhaseSeries,
    QuadratureSeries,
    dark_quadratures,
    estimate_theta,
    homodyne_spectrum,
    phase_variance,
)
