import pytest
from hypothesis import HealthCheck, settings

from funnel_equity.metrics import FunnelCounts
from funnel_equity.model import (
    AnalysisConfig,
    CovariateSpec,
    FunnelSpec,
    GroupLabel,
    UnitRecord,
)

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

TABLE1_LAYERS = ("Active Users", "Contributors", "Contributors with Response")


@pytest.fixture
def table1_counts() -> FunnelCounts:
    """The hypothetical contributor-funnel counts: 100M/150M, 15M/25M, 5M/10M."""
    return FunnelCounts(
        TABLE1_LAYERS,
        (100_000_000, 15_000_000, 5_000_000),
        (150_000_000, 25_000_000, 10_000_000),
    )


def make_unit(uid, group, flags, covariates=()) -> UnitRecord:
    return UnitRecord(str(uid), group, tuple(covariates), tuple(bool(f) for f in flags))


def make_units(focal_flags, reference_flags, covariates_by_unit=None):
    """Build units from per-unit flag tuples; optional parallel covariates."""
    units = []
    for i, flags in enumerate(focal_flags):
        cov = covariates_by_unit[0][i] if covariates_by_unit else ()
        units.append(make_unit(f"f{i}", "focal", flags, cov))
    for i, flags in enumerate(reference_flags):
        cov = covariates_by_unit[1][i] if covariates_by_unit else ()
        units.append(make_unit(f"r{i}", "reference", flags, cov))
    return units


@pytest.fixture
def two_layer_config() -> AnalysisConfig:
    return AnalysisConfig(
        funnel=FunnelSpec(("base", "converted")),
        focal_group=GroupLabel.focal("focal"),
        reference_group=GroupLabel.reference("reference"),
    )


@pytest.fixture
def stratified_config() -> AnalysisConfig:
    return AnalysisConfig(
        funnel=FunnelSpec(("base", "converted")),
        focal_group=GroupLabel.focal("focal"),
        reference_group=GroupLabel.reference("reference"),
        covariates=(CovariateSpec("segment", "categorical"),),
    )
