"""
iCARH Library

Integrative conditional-autoregressive horseshoe model for longitudinal
metabolomics: pathway-structured CAR covariance, horseshoe-shrunk effects
of external covariates (bacteria), AR(1) temporal dependence, HMC
inference, and the posterior analyses used to detect pathway perturbation
between cases and controls.

Basic Usage:
    >>> from icarh import (load_dataset, standardize, load_pathways, build_pathway_design,
    ...                    IcarhModel, ModelConfig, SamplerConfig, run_hmc, phi_difference_test)
    >>>
    >>> data, scaling = standardize(load_dataset('data.csv'))
    >>> design = build_pathway_design(load_pathways('pathways.json', data))
    >>> model = IcarhModel(data, design, ModelConfig(tau=1.2))
    >>> draws = run_hmc(model, SamplerConfig(iterations=2000, warmup=1000, chains=4, seed=1))
    >>>
    >>> report = phi_difference_test(draws)
    >>> print(report.table[report.table['perturbed']])

Simulation:
    >>> from icarh import SimulationConfig, simulate_replicates
    >>>
    >>> replicates = simulate_replicates(SimulationConfig(seed=7, replicates=10))
    >>> replicates[0].write('sim/replicate_01')

Classes:
    Dataset, PathwayGraph: Validated experiment tensor and pathway structure
    PathwayDesign, CarFactor: CAR operators, phi bounds and a cached Cholesky factor
    IcarhModel, ModelConfig, ParameterState: Joint density, gradient and transforms
    SamplerConfig, PosteriorDraws: HMC settings and draw tables
    SimulationConfig: Synthetic benchmark settings

Exceptions:
    IcarhError: Base exception for all iCARH errors
    IcarhValidationError: Invalid inputs or configuration (CLI exit code 2)
    IcarhNumericError: Numerical failures (CLI exit code 3)
    IcarhIOError: File system problems (CLI exit code 4)
"""

__version__ = '1.0.0'

from .data import (
    Dataset,
    PathwayGraph,
    load_dataset,
    load_pathways,
    standardize,
    write_dataset,
    write_pathways,
)
from .car import CarFactor, PathwayDesign, build_pathway_design, car_gaussian_logpdf, car_matrix
from .shrinkage import calibrate_tau, conditional_beta_mean, expected_kappa, kappa, kappa_density
from .model import IcarhModel, ModelConfig, ParameterState, grad_log_joint, log_joint, transform, untransform
from .sampler import PosteriorDraws, SamplerConfig, diagnostics, run_hmc, summarize
from .analysis import (
    beta_summary,
    phi_difference_test,
    ppc_mad,
    roc_auc,
    waic,
    whitened_residuals,
)
from .simulator import SimulationConfig, corrupt_design, simulate_replicates
from .exceptions import (
    IcarhError,
    IcarhValidationError,
    IcarhNumericError,
    IcarhIOError,
)

__all__ = [
    'Dataset',
    'PathwayGraph',
    'load_dataset',
    'load_pathways',
    'standardize',
    'write_dataset',
    'write_pathways',
    'CarFactor',
    'PathwayDesign',
    'build_pathway_design',
    'car_gaussian_logpdf',
    'car_matrix',
    'calibrate_tau',
    'conditional_beta_mean',
    'expected_kappa',
    'kappa',
    'kappa_density',
    'IcarhModel',
    'ModelConfig',
    'ParameterState',
    'grad_log_joint',
    'log_joint',
    'transform',
    'untransform',
    'PosteriorDraws',
    'SamplerConfig',
    'diagnostics',
    'run_hmc',
    'summarize',
    'beta_summary',
    'phi_difference_test',
    'ppc_mad',
    'roc_auc',
    'waic',
    'whitened_residuals',
    'SimulationConfig',
    'corrupt_design',
    'simulate_replicates',
    'IcarhError',
    'IcarhValidationError',
    'IcarhNumericError',
    'IcarhIOError',
]
