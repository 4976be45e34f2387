"""Domain types shared by every module, plus configuration validation.

A funnel is an ordered list of layers whose populations nest: a unit that
reached layer k must have reached layer k-1. Non-nested reach flags are a
data error, rejected at ingest and reported by :func:`validate_config`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .errors import ConfigError
from .status import MIDDLE, ThresholdProfile

#: Reserved bucket for covariate values not covered by a bucket map.
UNKNOWN_BUCKET = "UNKNOWN"

#: Key in a categorical bucket map that declares an explicit catch-all bucket.
CATCH_ALL_KEY = "*"


class GroupRole(Enum):
    FOCAL = "focal"
    REFERENCE = "reference"


@dataclass(frozen=True)
class GroupLabel:
    """One of the two demographic groups under comparison.

    The focal group sits in the numerator of every ratio; orientation is
    fixed per analysis and held constant across layers so that survival
    ratios stay comparable down the funnel.
    """

    name: str
    role: GroupRole

    def __post_init__(self):
        if not self.name:
            raise ConfigError("group name must be non-empty")

    @classmethod
    def focal(cls, name: str) -> "GroupLabel":
        return cls(name, GroupRole.FOCAL)

    @classmethod
    def reference(cls, name: str) -> "GroupLabel":
        return cls(name, GroupRole.REFERENCE)


@dataclass(frozen=True)
class UnitRecord:
    """A single member: group assignment, covariates, per-layer reach flags.

    Construction is permissive so that a whole file can be audited in one
    validation pass; monotone reach flags are enforced by the loaders and
    reported (not raised) by :func:`validate_config`.
    """

    unit_id: str
    group: str
    covariates: tuple[str | float, ...]
    layer_reached: tuple[bool, ...]

    def reached(self, layer: int) -> bool:
        return self.layer_reached[layer]

    @property
    def monotone(self) -> bool:
        """True when no layer is reached without the one before it."""
        prev = True
        for flag in self.layer_reached:
            if flag and not prev:
                return False
            prev = flag
        return True


@dataclass(frozen=True)
class FunnelSpec:
    """Ordered funnel layers; the base population is layer 0."""

    layers: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) < 2:
            raise ConfigError("funnel needs at least 2 layers")
        if any(not name for name in self.layers):
            raise ConfigError("funnel layer names must be non-empty")
        if len(set(self.layers)) != len(self.layers):
            raise ConfigError("funnel layer names must be unique")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def transitions(self) -> list[tuple[int, int]]:
        """The n-1 adjacent layer pairs, in funnel order."""
        return [(k - 1, k) for k in range(1, self.n_layers)]


@dataclass(frozen=True)
class CovariateSpec:
    """One confounder and how to coarsen it.

    Numeric covariates are binned by strictly increasing cut points into
    half-open, left-closed intervals spanning the whole real line. When no
    cut points are given, pooled quintiles are used (resolved at matching
    time). Categorical covariates map through ``buckets`` (identity when
    None); values missing from an explicit map fall into the bucket named
    by the ``*`` entry, or ``UNKNOWN`` if none is declared.
    """

    name: str
    kind: str  # "categorical" | "numeric"
    cut_points: tuple[float, ...] = ()
    buckets: Mapping[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "cut_points", tuple(self.cut_points))
        if not self.name:
            raise ConfigError("covariate name must be non-empty")
        if self.kind not in ("categorical", "numeric"):
            raise ConfigError(
                f"covariate {self.name!r}: kind must be 'categorical' or 'numeric', got {self.kind!r}"
            )
        if self.kind == "categorical" and self.cut_points:
            raise ConfigError(f"covariate {self.name!r}: cut points apply to numeric covariates only")
        if self.kind == "numeric" and self.buckets is not None:
            raise ConfigError(f"covariate {self.name!r}: bucket maps apply to categorical covariates only")
        if any(b >= a for b, a in zip(self.cut_points, self.cut_points[1:])):
            raise ConfigError(f"covariate {self.name!r}: cut points not increasing")


@dataclass(frozen=True)
class AnalysisConfig:
    """Everything one analysis needs: funnel, groups, confounders, thresholds."""

    funnel: FunnelSpec
    focal_group: GroupLabel
    reference_group: GroupLabel
    covariates: tuple[CovariateSpec, ...] = ()
    color_profile: ThresholdProfile = MIDDLE
    confidence_level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.focal_group.role is not GroupRole.FOCAL:
            raise ConfigError("focal_group must carry the focal role")
        if self.reference_group.role is not GroupRole.REFERENCE:
            raise ConfigError("reference_group must carry the reference role")
        if self.focal_group.name == self.reference_group.name:
            raise ConfigError("focal and reference groups must differ")
        if not 0 < self.confidence_level < 1:
            raise ConfigError(f"confidence_level must be in (0, 1), got {self.confidence_level}")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ConfigError("covariate names must be unique")

    @property
    def group_names(self) -> frozenset[str]:
        return frozenset((self.focal_group.name, self.reference_group.name))


@dataclass(frozen=True)
class Violation:
    """One validation finding; ``line`` is set when it maps to an input row."""

    kind: str
    message: str
    unit_id: str | None = None
    line: int | None = None

    def __str__(self) -> str:
        prefix = f"line {self.line}: " if self.line is not None else ""
        return f"{prefix}[{self.kind}] {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def render(self) -> str:
        if self.ok:
            return "valid: no violations"
        return "\n".join(str(v) for v in self.violations)


def validate_config(config: AnalysisConfig, units: Iterable[UnitRecord]) -> ValidationReport:
    """Audit units against the configuration; never raises.

    Checks group labels, reach-flag monotonicity, covariate arity, layer-flag
    arity, and layers no unit reaches. Pure: the same inputs always produce
    the same report.
    """
    n_layers = config.funnel.n_layers
    n_cov = len(config.covariates)
    groups = config.group_names
    violations: list[Violation] = []
    reached_any = [0] * n_layers

    for unit in units:
        if unit.group not in groups:
            violations.append(
                Violation("unknown_group", f"unit {unit.unit_id!r} has group {unit.group!r}", unit.unit_id)
            )
        if len(unit.layer_reached) != n_layers:
            violations.append(
                Violation(
                    "layer_arity",
                    f"unit {unit.unit_id!r} has {len(unit.layer_reached)} layer flags; funnel has {n_layers}",
                    unit.unit_id,
                )
            )
        elif not unit.monotone:
            violations.append(
                Violation(
                    "non_monotone",
                    f"unit {unit.unit_id!r} reaches a layer without the one before it",
                    unit.unit_id,
                )
            )
        else:
            for k, flag in enumerate(unit.layer_reached):
                if flag:
                    reached_any[k] += 1
        if len(unit.covariates) != n_cov:
            violations.append(
                Violation(
                    "covariate_arity",
                    f"unit {unit.unit_id!r} has {len(unit.covariates)} covariates; config declares {n_cov}",
                    unit.unit_id,
                )
            )

    for k, count in enumerate(reached_any):
        if count == 0:
            violations.append(
                Violation("empty_layer", f"no unit reaches layer {config.funnel.layers[k]!r}")
            )

    return ValidationReport(tuple(violations))
