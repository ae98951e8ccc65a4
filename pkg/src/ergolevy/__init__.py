"""Approximation of invariant distributions of Levy-driven SDEs.

Decreasing-step Euler schemes with exact (E), truncated (P), and
Gaussian-corrected (W) jump increments; weighted empirical measures;
step/threshold schedule planning with complexity guarding; and a replicated
experiment harness with CSV/SVG artifacts.
"""
from .empirical import (
    EmpiricalMeasure,
    NormalizedError,
    PoisonedAccumulatorError,
    TestFunction,
)
from .harness import (
    AggregateRecord,
    CltDiagnostic,
    ConfigError,
    ExperimentConfig,
    ExperimentFailedError,
    SlopeFit,
    build_measure,
    clt_diagnostic,
    default_checkpoints,
    emit_csv,
    emit_svg_plot,
    fit_rate_slope,
    run_experiment,
)
from .increments import (
    ComplexityGuardError,
    IncrementSample,
    InnovationLaw,
    StreamRole,
    UnsupportedSchemeError,
    derive_stream,
    sample_exact_increment,
    sample_truncated_increment,
    sample_wiener_correction,
)
from .levy import (
    AtomicMeasure,
    FiniteActivityMeasure,
    IsotropicPowerLawMeasure,
    LevyMeasure,
    PowerTailMeasure,
    RadialDensityMeasure,
    small_jump_cov_factor,
)
from .models import (
    MODEL_IDS,
    build_model,
    build_test_functions,
    clt_reference_variance,
    invariant_target,
)
from .rates import (
    InfeasibleScheduleError,
    RatePlan,
    StepRate,
    beta_ratio_diagnostics,
    classify_regime,
    fit_deterministic_exponent,
    h_of_zeta,
    min_zeta_for_low_moment_clt,
    optimal_exponent,
    recommended_schedule,
)
from .scheme import (
    SCHEME_KINDS,
    ChainState,
    DivergenceError,
    GuardReport,
    RunRecord,
    Schedule,
    ScheduleTables,
    SdeModel,
    Streams,
    complexity_guard,
    init_chain,
    run_chain,
    step,
)

__version__ = "1.0.0"

__all__ = [
    "AggregateRecord",
    "AtomicMeasure",
    "ChainState",
    "CltDiagnostic",
    "ComplexityGuardError",
    "ConfigError",
    "DivergenceError",
    "EmpiricalMeasure",
    "ExperimentConfig",
    "ExperimentFailedError",
    "FiniteActivityMeasure",
    "GuardReport",
    "IncrementSample",
    "InfeasibleScheduleError",
    "InnovationLaw",
    "IsotropicPowerLawMeasure",
    "LevyMeasure",
    "MODEL_IDS",
    "NormalizedError",
    "PoisonedAccumulatorError",
    "PowerTailMeasure",
    "RadialDensityMeasure",
    "RatePlan",
    "RunRecord",
    "SCHEME_KINDS",
    "Schedule",
    "ScheduleTables",
    "SdeModel",
    "SlopeFit",
    "StepRate",
    "StreamRole",
    "Streams",
    "TestFunction",
    "UnsupportedSchemeError",
    "beta_ratio_diagnostics",
    "build_measure",
    "build_model",
    "build_test_functions",
    "classify_regime",
    "clt_diagnostic",
    "clt_reference_variance",
    "complexity_guard",
    "default_checkpoints",
    "derive_stream",
    "emit_csv",
    "emit_svg_plot",
    "fit_deterministic_exponent",
    "fit_rate_slope",
    "h_of_zeta",
    "init_chain",
    "invariant_target",
    "min_zeta_for_low_moment_clt",
    "optimal_exponent",
    "recommended_schedule",
    "run_chain",
    "run_experiment",
    "sample_exact_increment",
    "sample_truncated_increment",
    "sample_wiener_correction",
    "small_jump_cov_factor",
    "step",
]
