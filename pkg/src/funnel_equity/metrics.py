"""Unadjusted representation metrics over funnel layer counts.

Four ratios per funnel: the raw count ratio at each layer, the ratio
normalized by each group's base population, the survival ratio between
adjacent layers (ratio of the groups' conditional conversion rates), and
the confounder-adjusted survival ratio filled in by the matching module.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable

from .errors import UndefinedRatioError
from .model import FunnelSpec, GroupLabel, UnitRecord
from .status import Status


@dataclass(frozen=True)
class FunnelCounts:
    """Per-layer unit counts for the focal and reference groups."""

    layers: tuple[str, ...]
    focal: tuple[int, ...]
    reference: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "focal", tuple(int(c) for c in self.focal))
        object.__setattr__(self, "reference", tuple(int(c) for c in self.reference))
        if not len(self.layers) == len(self.focal) == len(self.reference):
            raise ValueError("layers, focal and reference must have equal length")
        for name, counts in (("focal", self.focal), ("reference", self.reference)):
            if any(c < 0 for c in counts):
                raise ValueError(f"{name} counts must be non-negative")
            if any(b < a for b, a in zip(counts, counts[1:])):
                raise ValueError(f"{name} counts must be non-increasing down the funnel")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def zero_reference_layers(self) -> tuple[str, ...]:
        """Layers whose ratios are undefined downstream: reference 0 with focal > 0."""
        return tuple(
            layer
            for layer, f, r in zip(self.layers, self.focal, self.reference)
            if r == 0 and f > 0
        )


@dataclass(frozen=True)
class LayerMetrics:
    layer: str
    focal_count: int
    reference_count: int
    raw_ratio: float
    normalized_ratio: float


@dataclass(frozen=True)
class TransitionMetrics:
    from_layer: str
    to_layer: str
    survival_ratio: float
    adjusted_ratio: float | None = None
    adjusted_ci_low: float | None = None
    adjusted_ci_high: float | None = None
    status: Status | None = None


@dataclass(frozen=True)
class MetricTable:
    """Per-layer and per-transition metrics; adjusted columns start empty."""

    layers: tuple[LayerMetrics, ...]
    transitions: tuple[TransitionMetrics, ...]

    def with_adjusted(
        self,
        index: int,
        adjusted: float,
        ci_low: float | None = None,
        ci_high: float | None = None,
        status: Status | None = None,
    ) -> "MetricTable":
        """A copy with the adjusted columns of transition ``index`` filled in."""
        updated = dataclasses.replace(
            self.transitions[index],
            adjusted_ratio=adjusted,
            adjusted_ci_low=ci_low,
            adjusted_ci_high=ci_high,
            status=status,
        )
        transitions = self.transitions[:index] + (updated,) + self.transitions[index + 1 :]
        return dataclasses.replace(self, transitions=transitions)


def layer_counts(
    units: Iterable[UnitRecord],
    funnel: FunnelSpec,
    focal: GroupLabel,
    reference: GroupLabel,
) -> FunnelCounts:
    """Count units of each group reaching each funnel layer.

    Units belonging to neither group are ignored, which lets multi-group
    data be analyzed as repeated two-group runs. Expects validated units;
    raises ValueError on layer-flag arity mismatches.
    """
    n = funnel.n_layers
    focal_counts = [0] * n
    reference_counts = [0] * n
    for unit in units:
        if unit.group == focal.name:
            tally = focal_counts
        elif unit.group == reference.name:
            tally = reference_counts
        else:
            continue
        if len(unit.layer_reached) != n:
            raise ValueError(
                f"unit {unit.unit_id!r} has {len(unit.layer_reached)} layer flags; funnel has {n}"
            )
        for k, flag in enumerate(unit.layer_reached):
            if flag:
                tally[k] += 1
    return FunnelCounts(funnel.layers, tuple(focal_counts), tuple(reference_counts))


def raw_ratio(focal_count: int, reference_count: int) -> float:
    """Focal over reference raw counts at one layer."""
    if reference_count == 0:
        raise UndefinedRatioError("raw ratio undefined: reference count is zero")
    return focal_count / reference_count


def normalized_ratio(focal_k: int, reference_k: int, focal_base: int, reference_base: int) -> float:
    """Ratio of per-base-population rates: (focal_k/focal_base) / (reference_k/reference_base)."""
    if focal_base == 0 or reference_base == 0:
        raise UndefinedRatioError("normalized ratio undefined: empty base population")
    if reference_k == 0:
        raise UndefinedRatioError("normalized ratio undefined: reference count is zero")
    return (focal_k / focal_base) / (reference_k / reference_base)


def funnel_survival_ratio(normalized_k: float, normalized_prev: float) -> float:
    """Normalized ratio at this layer over the previous layer's."""
    if normalized_prev <= 0:
        raise UndefinedRatioError("survival ratio undefined: previous normalized ratio is zero")
    return normalized_k / normalized_prev


def build_metric_table(counts: FunnelCounts) -> MetricTable:
    """All unadjusted metrics for a counts table; adjusted columns left empty.

    Emits one row per layer and one transition per adjacent layer pair
    (n-1 transitions for n layers). Undefined ratios raise with the layer
    named.
    """
    if counts.focal[0] == 0 or counts.reference[0] == 0:
        raise UndefinedRatioError("base layer is empty for one group", layer=counts.layers[0])

    layers: list[LayerMetrics] = []
    for layer, f, r in zip(counts.layers, counts.focal, counts.reference):
        try:
            raw = raw_ratio(f, r)
            norm = normalized_ratio(f, r, counts.focal[0], counts.reference[0])
        except UndefinedRatioError as exc:
            raise UndefinedRatioError(str(exc), layer=layer) from None
        layers.append(LayerMetrics(layer, f, r, raw, norm))

    transitions: list[TransitionMetrics] = []
    for k in range(1, counts.n_layers):
        try:
            survival = funnel_survival_ratio(layers[k].normalized_ratio, layers[k - 1].normalized_ratio)
        except UndefinedRatioError as exc:
            raise UndefinedRatioError(str(exc), layer=counts.layers[k]) from None
        transitions.append(TransitionMetrics(counts.layers[k - 1], counts.layers[k], survival))

    return MetricTable(tuple(layers), tuple(transitions))
