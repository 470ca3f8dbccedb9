"""Robust Epstein-Zin consumption and investment under Heston stochastic volatility."""

from .errors import (
    AdmissibilityViolation,
    ConfigError,
    DomainError,
    InstabilityDetected,
    InvalidParams,
    StepTooLarge,
    TerminalSingularity,
    ValidationFailed,
    ZeroDenominator,
)
from .params import (
    DerivedConstants,
    ModelParams,
    SolverConfig,
    ValidationReport,
    derive_constants,
    load_config,
    parse_config,
    prepare,
    validate_assumption31,
    validate_heston,
)

__version__ = "0.1.0"
