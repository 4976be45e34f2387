"""Demographic representation metrics for product funnels.

Computes raw, normalized, survival, and matching-adjusted survival ratios
over funnel layers, classifies results under a traffic-light rule, and
tests A/B experiments for significant representation shifts.
"""

from .errors import (
    ConfigError,
    DegenerateRateError,
    DegenerateVarianceError,
    FunnelEquityError,
    IngestError,
    NoOverlapError,
    UndefinedRatioError,
)
from .model import (
    AnalysisConfig,
    CovariateSpec,
    FunnelSpec,
    GroupLabel,
    GroupRole,
    UnitRecord,
    ValidationReport,
    Violation,
    validate_config,
)
from .metrics import (
    FunnelCounts,
    MetricTable,
    build_metric_table,
    funnel_survival_ratio,
    layer_counts,
    normalized_ratio,
    raw_ratio,
)
from .cem import (
    StratumTable,
    WeightedUnit,
    adjusted_survival_ratio,
    cem_weights,
    coarsen,
    imbalance_report,
    stratify_and_prune,
)
from .inference import (
    LiftResult,
    RatioEstimate,
    TransitionEstimate,
    bootstrap_sr_confidence_interval,
    compare_experiments,
    effective_sample_size,
    log_sr_variance,
    p_value,
    sr_confidence_interval,
    z_score,
)
from .status import LOOSE, MIDDLE, STRICT, Status, ThresholdProfile, classify, profile_from_name
from .synth import PopulationSpec, StratumSpec, generate, generate_population, oracle_adjusted_ratio
from .cli import analyze_counts, analyze_funnel

__version__ = "0.1.0"
