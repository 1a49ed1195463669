"""Plausibility bounds for physical theories from finite Bell-test data.

Builds data-driven Bell-like inequalities by information projection of the
observed frequencies onto a convex correlation set (local, nonsignaling, or
an SDP outer approximation of the quantum set), then converts the product of
ratio values over the held-out test trials into a p-value upper bound.
"""

from .engine import (
    AnalysisConfig,
    AnalysisReport,
    analyze_counts_pair,
    analyze_sequence,
    block_adaptive_analyze,
    log_statistic,
    p_bound,
    split_trials,
)
from .errors import (
    BadSplit,
    NumericalDegeneracy,
    PbrError,
    SolverFailure,
    SupportMismatch,
    UnsupportedScenario,
    ValidationError,
    ZeroCountSetting,
)
from .projection import (
    ProjectionResult,
    RatioTable,
    build_ratios,
    certify_ratios,
    kl_divergence,
    project_kl,
)
from .scenario import (
    Behavior,
    BellFunctional,
    CountsTable,
    InputDistribution,
    Scenario,
    TrialSequence,
    bell_value,
    chsh_functional,
    chsh_prime_functional,
    chsh_slice_functional,
    frequencies_from_counts,
    is_nonsignaling,
    pr_box,
    white_noise,
)
from .sets import (
    HypothesisSet,
    SetKind,
    VertexList,
    hypothesis_set,
    local_vertices,
    max_linear_functional,
    membership,
    nosignaling_vertices,
    visibility,
)
from .simulate import (
    BatchSummary,
    SourceSpec,
    canonical_noise_weights,
    draw_trial,
    iso_source,
    mixed_source,
    run_batch,
    sample_trials,
    source_behavior,
)

__version__ = "0.1.0"
