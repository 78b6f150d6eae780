"""Numerics for 𝒜-free fields: constant-rank operators, spectral projections,
𝒜-quasiconvex envelopes and empirical Young measures."""
from .errors import (
    AquasiError,
    DivergenceError,
    DomainError,
    EvaluationError,
    InputError,
    NonConstantRankError,
    NumericalError,
    ParseError,
    RankChangeError,
    RankDeficientError,
    RankMismatchError,
)
from .operators import (
    DEFAULT_SEED,
    ConeSample,
    OperatorSpec,
    RankCertificate,
    assemble_symbol,
    load_operator,
    preset,
    sample_characteristic_cone,
    verify_constant_rank,
)
from .pinv import continuity_probe, decompose_symbol, full_rank_factorize, pseudoinverse
from .torus import PeriodicField, apply_operator_spectral, neg_sobolev_norm, project_afree
from .integrand import IntegrandExpr, parse_integrand, resolve_integrand
from .envelope import (
    EnvelopeReport,
    TabulatedFunction,
    convex_envelope_oracle,
    idempotence_check,
    lambda_convexity_check,
    laminate_upper_bound,
    quasiconvexify,
    remark_relaxation_demo,
)
from .young import (
    EmpiricalYoungMeasure,
    OscillationProfile,
    empirical_measure,
    jensen_gap,
    oscillate,
    sequence_diagnostics,
    translate_measure,
    wasserstein1,
)

__version__ = "0.1.0"
