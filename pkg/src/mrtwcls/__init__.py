"""Estimation of time-varying moderated treatment effects from
micro-randomized longitudinal data, via centered and weighted least
squares with weight-adjusted sandwich inference, plus GEE comparators
and a replication-experiment harness."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import (
    ConfigError,
    Degenerate,
    DegreesOfFreedomExhausted,
    DimensionMismatch,
    EstimationError,
    FeatureEvaluationError,
    InvariantViolation,
    MissingColumn,
    NonConvergence,
    NonPositiveDefiniteCorrelation,
    ParseError,
    PositivityError,
    RaggedPanel,
    RankDeficient,
    Separation,
    SingularLeverage,
    SingularSystem,
)
from .features import Design, DesignRow, Expression, FeatureSpec, build_design
from .gee import Correlation, GeeFit, ar1_estimated, ar1_fixed, ar1_matrix, fit_gee, independence
from .panel import IndividualSeries, PanelDataset, ingest_csv, write_csv
from .probmodels import (
    KnownConstant,
    KnownPerOccasion,
    Logistic,
    NuisanceFitReport,
    ProbabilityModel,
    evaluate_probability,
    fit_constant_numerator,
    fit_logistic,
)
from .sim import (
    GeeAnalysis,
    GenerativeConfig,
    MarginalEffect,
    ReplicationReport,
    WclsAnalysis,
    generate_trial,
    preset_blocks,
    run_preset,
    run_replications,
    true_marginal_effect,
)
from .wcls import (
    InferenceResult,
    WclsFit,
    WeightInfo,
    compute_weights,
    fit_wcls,
    infer,
    sandwich_variance,
    small_sample_correct,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "__version__",
    # errors
    "EstimationError", "ConfigError", "MissingColumn", "RaggedPanel",
    "InvariantViolation", "ParseError", "FeatureEvaluationError", "Separation",
    "RankDeficient", "NonConvergence", "Degenerate", "PositivityError",
    "SingularSystem", "DimensionMismatch", "SingularLeverage",
    "DegreesOfFreedomExhausted", "NonPositiveDefiniteCorrelation",
    # data
    "PanelDataset", "IndividualSeries", "ingest_csv", "write_csv",
    "FeatureSpec", "Expression", "Design", "DesignRow", "build_design",
    # probability models
    "ProbabilityModel", "KnownConstant", "KnownPerOccasion", "Logistic",
    "NuisanceFitReport", "evaluate_probability", "fit_logistic",
    "fit_constant_numerator",
    # estimators
    "WeightInfo", "WclsFit", "InferenceResult", "compute_weights", "fit_wcls",
    "sandwich_variance", "small_sample_correct", "infer",
    "Correlation", "GeeFit", "fit_gee", "independence", "ar1_fixed",
    "ar1_estimated", "ar1_matrix",
    # simulation
    "GenerativeConfig", "MarginalEffect", "generate_trial",
    "true_marginal_effect", "WclsAnalysis", "GeeAnalysis",
    "ReplicationReport", "run_replications", "preset_blocks", "run_preset",
]
