"""
EF-BV: distributed gradient methods with compressed communication.

This package simulates EF-BV, a control-variate algorithm whose
two scalings (lambda, nu) recover EF21 and DIANA, together with
the bias-variance calculus of compressors, the tuning of its step
size and a certification harness for all of it.
"""

__version__ = "1.0.0"
__author__ = "The EF-BV Simulator Authors"
__description__ = "A simulator for distributed gradient methods with compressed communication, implementing EF-BV with EF21 and DIANA as parameter specializations"

from .types import (
    Algorithm,
    ClassParams,
    Dependence,
    EngineState,
    Family,
    HInit,
    Mode,
    ReferenceSolution,
    RegularizerKind,
    RoundRecord,
    Shard,
    SmoothnessProfile,
    SparseMessage,
    TuneResult,
)
from .errors import (
    ConfigurationError,
    ContractViolation,
    DivergenceError,
    EFBVError,
    EnumerationTooLarge,
    LibSVMParseError,
    MissingReferenceError,
    NumericalError,
)
from .protocols import Compressor, RoundContext
from .compressors import (
    CompressorSpec,
    catalog,
    compress,
    contraction_alpha,
    lambda_star,
    scale_params,
    theoretical_params,
)
from .tuning import (
    gamma_max,
    nu_star,
    rate_constants,
    rate_factor,
    residual_factor,
    shapes_report,
    tune,
)
from .problems import (
    Dataset,
    LogisticProblem,
    Regularizer,
    local_gradient,
    parse_libsvm,
    partition,
    prox,
    smoothness,
    synth_dataset,
)
from .engine import RunConfig, Simulator, init, lyapunov, run, step
from .certifier import (
    EstimateReport,
    enumerate_exact,
    enumerate_exact_average,
    estimate_class_params,
    estimate_omega_av,
    finite_difference_check,
    reference_solution,
)

__all__ = [
    "Algorithm",
    "ClassParams",
    "Dependence",
    "EngineState",
    "Family",
    "HInit",
    "Mode",
    "ReferenceSolution",
    "RegularizerKind",
    "RoundRecord",
    "Shard",
    "SmoothnessProfile",
    "SparseMessage",
    "TuneResult",
    "ConfigurationError",
    "ContractViolation",
    "DivergenceError",
    "EFBVError",
    "EnumerationTooLarge",
    "LibSVMParseError",
    "MissingReferenceError",
    "NumericalError",
    "Compressor",
    "RoundContext",
    "CompressorSpec",
    "catalog",
    "compress",
    "contraction_alpha",
    "lambda_star",
    "scale_params",
    "theoretical_params",
    "gamma_max",
    "nu_star",
    "rate_constants",
    "rate_factor",
    "residual_factor",
    "shapes_report",
    "tune",
    "Dataset",
    "LogisticProblem",
    "Regularizer",
    "local_gradient",
    "parse_libsvm",
    "partition",
    "prox",
    "smoothness",
    "synth_dataset",
    "RunConfig",
    "Simulator",
    "init",
    "lyapunov",
    "run",
    "step",
    "EstimateReport",
    "enumerate_exact",
    "enumerate_exact_average",
    "estimate_class_params",
    "estimate_omega_av",
    "finite_difference_check",
    "reference_solution",
    "__version__",
    "__author__",
    "__description__",
]
