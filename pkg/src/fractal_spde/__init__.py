"""Spectral analysis and stochastic heat equations for self-similar measures.

The measure is the invariant measure of an affine iterated function system
on [0, 1].  The package computes eigenpairs of the associated Krein-Feller
operator, evaluates heat kernels and resolvents, simulates the stochastic
heat equation driven by space-time white noise, and estimates moment,
Hoelder and Lyapunov exponents from ensembles.
"""

from .analysis import (CheckRow, HolderFit, IntermittencyReport, LyapunovEstimate,
                       MomentEstimate, holder_fit, intermittency_report,
                       lyapunov_estimate, moment_estimate, moment_finiteness_report)
from .config import RunConfig, load_config, parse_config
from .csvio import emit_csv
from .errors import (FractalSPDEError, IFSError, OverlappingCells, BadWeights, BadRatio,
                     EndpointMismatch, PartitionTooLarge, NotInSet, DegeneratePartition,
                     ConvergenceFailure, WindowTooSmall, TimeTooSmall,
                     NonpositiveLambda, NonFinite, NoContraction, InsufficientPaths,
                     InsufficientLags, WrongRegime, ParseError, SchemaError)
from .ifs import (Exponents, IFSSpec, LevelPartition, build_partition, cantor_spec,
                  delta_approximant, exponents, hausdorff_dimension, lebesgue_spec,
                  spectral_exponent, delta_exponent, validate_ifs)
from .kernel import (KernelEvaluator, kernel_bounds_report, laplace_check,
                     resolvent_matrix, delta_resolvent_check)
from .spde import (Coefficient, Ensemble, EnsembleConfig, InitialCondition, NoiseModel,
                   euler_step, euler_trajectory, picard_reference, simulate_ensemble)
from .spectral import (DIRICHLET, NEUMANN, SpectralBasis, assemble_eigenproblem,
                       asymptotics_report, solve_spectrum)

__version__ = "0.1.0"

__all__ = [
    'CheckRow',
    'HolderFit',
    'IntermittencyReport',
    'LyapunovEstimate',
    'MomentEstimate',
    'holder_fit',
    'intermittency_report',
    'lyapunov_estimate',
    'moment_estimate',
    'moment_finiteness_report',
    'RunConfig',
    'load_config',
    'parse_config',
    'emit_csv',
    'FractalSPDEError',
    'IFSError',
    'OverlappingCells',
    'BadWeights',
    'BadRatio',
    'EndpointMismatch',
    'PartitionTooLarge',
    'NotInSet',
    'DegeneratePartition',
    'ConvergenceFailure',
    'WindowTooSmall',
    'TimeTooSmall',
    'NonpositiveLambda',
    'NonFinite',
    'NoContraction',
    'InsufficientPaths',
    'InsufficientLags',
    'WrongRegime',
    'ParseError',
    'SchemaError',
    'Exponents',
    'IFSSpec',
    'LevelPartition',
    'build_partition',
    'cantor_spec',
    'delta_approximant',
    'exponents',
    'hausdorff_dimension',
    'lebesgue_spec',
    'spectral_exponent',
    'delta_exponent',
    'validate_ifs',
    'KernelEvaluator',
    'kernel_bounds_report',
    'laplace_check',
    'resolvent_matrix',
    'delta_resolvent_check',
    'Coefficient',
    'Ensemble',
    'EnsembleConfig',
    'InitialCondition',
    'NoiseModel',
    'euler_step',
    'euler_trajectory',
    'picard_reference',
    'simulate_ensemble',
    'DIRICHLET',
    'NEUMANN',
    'SpectralBasis',
    'assemble_eigenproblem',
    'asymptotics_report',
    'solve_spectrum',
]
