"""Coarsened exact matching for confounder-adjusted survival ratios.

Each covariate is coarsened into buckets; units are matched exactly on the
bucket tuple; strata missing either group are pruned and their units get
weight zero. A matched unit in stratum s receives

    focal:      w = (m_T / m_T^s) * (m^s / m)
    reference:  w = (m_C / m_C^s) * (m^s / m)

where m_T^s / m_C^s count the stratum's focal / reference units at the
matching layer, m_T / m_C sum those over matched strata, m^s = m_T^s + m_C^s
and m = m_T + m_C. Both groups then carry the pooled stratum mix, so the
weighted ratio of their conversion rates into the next layer is the adjusted
funnel survival ratio. Matching is redone per transition, at the upstream
layer of that transition.

All stratum iteration is in sorted-key order and stratum members are sorted
by unit id, so results do not depend on input order.
"""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import NoOverlapError, UndefinedRatioError
from .model import CATCH_ALL_KEY, UNKNOWN_BUCKET, CovariateSpec, GroupLabel, UnitRecord

StratumKey = tuple[str, ...]

_QUINTILES = (0.2, 0.4, 0.6, 0.8)


def resolve_covariates(
    units: Iterable[UnitRecord], covariates: Sequence[CovariateSpec]
) -> tuple[CovariateSpec, ...]:
    """Fill in default cut points for numeric covariates that declare none.

    The default is pooled quintiles over all units (both groups), dropping
    duplicate quantiles so the cut points stay strictly increasing. This is
    deterministic for a given unit collection.
    """
    pending = [i for i, spec in enumerate(covariates) if spec.kind == "numeric" and not spec.cut_points]
    if not pending:
        return tuple(covariates)
    pooled: dict[int, list[float]] = {i: [] for i in pending}
    for unit in units:
        for i in pending:
            value = unit.covariates[i]
            _require_numeric(covariates[i], value)
            pooled[i].append(float(value))
    resolved = list(covariates)
    for i in pending:
        values = pooled[i]
        if not values:
            continue
        cuts: list[float] = []
        for q in np.quantile(np.asarray(values, dtype=float), _QUINTILES):
            point = float(q)
            if not cuts or point > cuts[-1]:
                cuts.append(point)
        spec = resolved[i]
        resolved[i] = CovariateSpec(spec.name, spec.kind, tuple(cuts))
    return tuple(resolved)


def _require_numeric(spec: CovariateSpec, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"covariate {spec.name!r}: expected a number, got {value!r}")
    if math.isnan(value):
        raise ValueError(f"covariate {spec.name!r}: NaN is not coarsenable")
    return float(value)


def _numeric_bucket(spec: CovariateSpec, value) -> str:
    v = _require_numeric(spec, value)
    cuts = spec.cut_points
    if not cuts:
        return "all"
    i = bisect_right(cuts, v)
    if i == 0:
        return f"(-inf,{cuts[0]:g})"
    if i == len(cuts):
        return f"[{cuts[-1]:g},inf)"
    return f"[{cuts[i - 1]:g},{cuts[i]:g})"


def _categorical_bucket(spec: CovariateSpec, value) -> str:
    v = str(value)
    if spec.buckets is None:
        return v
    return spec.buckets.get(v, spec.buckets.get(CATCH_ALL_KEY, UNKNOWN_BUCKET))


def coarsen(
    units: Iterable[UnitRecord], covariates: Sequence[CovariateSpec]
) -> dict[str, StratumKey]:
    """Assign each unit its coarsened covariate signature.

    Numeric values are binned into half-open, left-closed intervals spanning
    the real line; NaN raises. Categorical values pass through the bucket map
    (identity when none), falling back to the catch-all / UNKNOWN bucket.
    With zero covariates every unit shares the empty key.
    """
    units = list(units)
    resolved = resolve_covariates(units, covariates)
    keys: dict[str, StratumKey] = {}
    for unit in units:
        if len(unit.covariates) != len(resolved):
            raise ValueError(
                f"unit {unit.unit_id!r} has {len(unit.covariates)} covariates; expected {len(resolved)}"
            )
        buckets = []
        for spec, value in zip(resolved, unit.covariates):
            if spec.kind == "numeric":
                buckets.append(_numeric_bucket(spec, value))
            else:
                buckets.append(_categorical_bucket(spec, value))
        keys[unit.unit_id] = tuple(buckets)
    return keys


@dataclass(frozen=True)
class Stratum:
    """Units sharing one coarsened signature, restricted to the matching layer.

    ``focal_units`` / ``reference_units`` are the ids of units at the
    matching layer, sorted; the layer-count tuples track how many of those
    survive to each layer.
    """

    key: StratumKey
    focal_units: tuple[str, ...]
    reference_units: tuple[str, ...]
    focal_layer_counts: tuple[int, ...]
    reference_layer_counts: tuple[int, ...]

    @property
    def m_focal(self) -> int:
        return len(self.focal_units)

    @property
    def m_reference(self) -> int:
        return len(self.reference_units)

    @property
    def size(self) -> int:
        return self.m_focal + self.m_reference

    @property
    def matched(self) -> bool:
        return self.m_focal > 0 and self.m_reference > 0


@dataclass(frozen=True)
class StratumTable:
    """All strata for one matching layer, sorted by key."""

    matching_layer: int
    layer_names: tuple[str, ...]
    strata: tuple[Stratum, ...]

    @cached_property
    def matched_strata(self) -> tuple[Stratum, ...]:
        return tuple(s for s in self.strata if s.matched)

    @property
    def m_focal(self) -> int:
        return sum(s.m_focal for s in self.matched_strata)

    @property
    def m_reference(self) -> int:
        return sum(s.m_reference for s in self.matched_strata)

    @property
    def m_total(self) -> int:
        return self.m_focal + self.m_reference

    @cached_property
    def by_key(self) -> dict[StratumKey, Stratum]:
        return {s.key: s for s in self.strata}


@dataclass(frozen=True)
class WeightedUnit:
    unit_id: str
    weight: float


def stratify_and_prune(
    keys: Mapping[str, StratumKey],
    units: Iterable[UnitRecord],
    matching_layer: int,
    focal: GroupLabel,
    reference: GroupLabel,
    layer_names: Sequence[str] | None = None,
) -> StratumTable:
    """Group units at ``matching_layer`` into strata and mark the matched ones.

    Only units reaching the matching layer enter a stratum; strata lacking
    either group are kept in the table (for diagnostics) but marked
    unmatched and excluded from the weight totals. Raises NoOverlapError
    when no stratum contains both groups.
    """
    builders: dict[StratumKey, dict] = {}
    n_layers: int | None = None
    for unit in units:
        if n_layers is None:
            n_layers = len(unit.layer_reached)
            if not 0 <= matching_layer < n_layers:
                raise ValueError(f"matching layer {matching_layer} out of range for {n_layers} layers")
        if not unit.reached(matching_layer):
            continue
        if unit.group == focal.name:
            side = "focal"
        elif unit.group == reference.name:
            side = "reference"
        else:
            raise ValueError(f"unit {unit.unit_id!r} has unexpected group {unit.group!r}")
        try:
            key = keys[unit.unit_id]
        except KeyError:
            raise ValueError(f"no stratum key for unit {unit.unit_id!r}") from None
        cell = builders.get(key)
        if cell is None:
            cell = builders[key] = {
                "focal": [],
                "reference": [],
                "focal_counts": [0] * n_layers,
                "reference_counts": [0] * n_layers,
            }
        cell[side].append(unit.unit_id)
        tally = cell[f"{side}_counts"]
        for k, flag in enumerate(unit.layer_reached):
            if flag:
                tally[k] += 1

    strata = tuple(
        Stratum(
            key,
            tuple(sorted(cell["focal"])),
            tuple(sorted(cell["reference"])),
            tuple(cell["focal_counts"]),
            tuple(cell["reference_counts"]),
        )
        for key, cell in sorted(builders.items())
    )
    names = tuple(layer_names) if layer_names is not None else tuple(str(k) for k in range(n_layers or 0))
    table = StratumTable(matching_layer, names, strata)
    if not table.matched_strata:
        raise NoOverlapError("no stratum contains both groups")
    return table


def stratum_weights(table: StratumTable) -> dict[StratumKey, tuple[float, float]]:
    """Per-stratum (focal, reference) unit weights; zero for unmatched strata."""
    m_t, m_c = table.m_focal, table.m_reference
    m = m_t + m_c
    out: dict[StratumKey, tuple[float, float]] = {}
    for s in table.strata:
        if s.matched:
            share = s.size / m
            out[s.key] = ((m_t / s.m_focal) * share, (m_c / s.m_reference) * share)
        else:
            out[s.key] = (0.0, 0.0)
    return out


def cem_weights(table: StratumTable) -> tuple[WeightedUnit, ...]:
    """Per-unit matching weights for every unit in the table.

    Matched focal units get (m_T/m_T^s)(m^s/m), matched reference units
    (m_C/m_C^s)(m^s/m); units in pruned strata get exactly 0. Within the
    matched set the focal weights sum to m_T and the reference weights to
    m_C.
    """
    per_stratum = stratum_weights(table)
    out: list[WeightedUnit] = []
    for s in table.strata:
        w_f, w_r = per_stratum[s.key]
        out.extend(WeightedUnit(uid, w_f) for uid in s.focal_units)
        out.extend(WeightedUnit(uid, w_r) for uid in s.reference_units)
    return tuple(out)


def weighted_conversion_rates(
    table: StratumTable,
    weights: Iterable[WeightedUnit],
    from_layer: int,
    to_layer: int,
) -> tuple[float, float]:
    """Weighted per-group conversion rates from ``from_layer`` to ``to_layer``.

    For each group: sum_s Y^s W^s / sum_s W^s over matched strata, with Y^s
    the stratum conversion rate and W^s the stratum's total unit weight.
    """
    if from_layer != table.matching_layer:
        raise ValueError(f"table was matched at layer {table.matching_layer}, not {from_layer}")
    if to_layer != from_layer + 1:
        raise ValueError("to_layer must be the layer immediately after from_layer")
    if not table.matched_strata:
        raise NoOverlapError("no stratum contains both groups")
    wmap = {w.unit_id: w.weight for w in weights}
    num_f = den_f = num_r = den_r = 0.0
    for s in table.matched_strata:
        try:
            w_f = math.fsum(wmap[u] for u in s.focal_units)
            w_r = math.fsum(wmap[u] for u in s.reference_units)
        except KeyError as exc:
            raise ValueError(f"weights missing for unit {exc.args[0]!r}") from None
        y_f = s.focal_layer_counts[to_layer] / s.focal_layer_counts[from_layer]
        y_r = s.reference_layer_counts[to_layer] / s.reference_layer_counts[from_layer]
        num_f += y_f * w_f
        den_f += w_f
        num_r += y_r * w_r
        den_r += w_r
    return num_f / den_f, num_r / den_r


def adjusted_survival_ratio(
    table: StratumTable,
    weights: Iterable[WeightedUnit],
    from_layer: int,
    to_layer: int,
) -> float:
    """The CEM-adjusted funnel survival ratio for one transition.

    Ratio of the groups' weighted conversion rates; with a single stratum
    (e.g. zero covariates) every weight is 1 and this collapses to the
    unadjusted survival ratio.
    """
    rate_f, rate_r = weighted_conversion_rates(table, weights, from_layer, to_layer)
    if rate_r == 0:
        layer = table.layer_names[to_layer] if to_layer < len(table.layer_names) else str(to_layer)
        raise UndefinedRatioError("weighted reference conversion is zero", layer=layer)
    return rate_f / rate_r


@dataclass(frozen=True)
class CovariateImbalance:
    covariate: str
    l1_before: float
    l1_after: float


@dataclass(frozen=True)
class ImbalanceReport:
    covariates: tuple[CovariateImbalance, ...]

    @property
    def max_l1_after(self) -> float:
        return max((c.l1_after for c in self.covariates), default=0.0)

    def render(self) -> str:
        if not self.covariates:
            return "no covariates: single universal stratum"
        lines = [f"{'covariate':<24}{'L1 before':>12}{'L1 after':>12}"]
        lines += [f"{c.covariate:<24}{c.l1_before:>12.6f}{c.l1_after:>12.6f}" for c in self.covariates]
        return "\n".join(lines)


def _marginals(
    strata: Iterable[Stratum], position: int, weighted: Mapping[StratumKey, tuple[float, float]] | None
) -> tuple[dict[str, float], dict[str, float]]:
    focal: dict[str, float] = {}
    reference: dict[str, float] = {}
    for s in strata:
        if weighted is None:
            mass_f, mass_r = float(s.m_focal), float(s.m_reference)
        else:
            w_f, w_r = weighted[s.key]
            mass_f, mass_r = s.m_focal * w_f, s.m_reference * w_r
        bucket = s.key[position]
        focal[bucket] = focal.get(bucket, 0.0) + mass_f
        reference[bucket] = reference.get(bucket, 0.0) + mass_r
    return focal, reference


def _l1(focal: Mapping[str, float], reference: Mapping[str, float]) -> float:
    total_f = sum(focal.values())
    total_r = sum(reference.values())
    if total_f == 0 or total_r == 0:
        return 0.0
    buckets = sorted(set(focal) | set(reference))
    return math.fsum(abs(focal.get(b, 0.0) / total_f - reference.get(b, 0.0) / total_r) for b in buckets)


def imbalance_report(
    strata_before: StratumTable,
    strata_after: StratumTable,
    covariate_names: Sequence[str] | None = None,
) -> ImbalanceReport:
    """Per-covariate L1 distance between group distributions, before and after.

    "Before" marginalizes all strata of ``strata_before`` without weights;
    "after" marginalizes the matched strata of ``strata_after`` with the
    matching weights applied. Exact matching makes the after distance zero
    up to float noise.
    """
    arity = len(strata_before.strata[0].key) if strata_before.strata else 0
    names = tuple(covariate_names) if covariate_names is not None else tuple(
        f"covariate_{j}" for j in range(arity)
    )
    weights_after = stratum_weights(strata_after)
    rows = []
    for j in range(arity):
        before_f, before_r = _marginals(strata_before.strata, j, None)
        after_f, after_r = _marginals(strata_after.matched_strata, j, weights_after)
        rows.append(CovariateImbalance(names[j], _l1(before_f, before_r), _l1(after_f, after_r)))
    return ImbalanceReport(tuple(rows))


def strata_dump_csv(
    table: StratumTable,
    weights: Iterable[WeightedUnit] | None = None,
    focal_label: str = "focal",
    reference_label: str = "reference",
) -> str:
    """Audit CSV with columns stratum_key, group, layer, count, weight_sum.

    ``weight_sum`` is the group's total matching weight in the stratum
    (zero for pruned strata), repeated on every layer row of the group.
    Weights are derived from the table when not supplied.
    """
    if weights is None:
        weights = cem_weights(table)
    wmap = {w.unit_id: w.weight for w in weights}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stratum_key", "group", "layer", "count", "weight_sum"])
    for s in table.strata:
        key = "|".join(s.key)
        for label, counts, members in (
            (focal_label, s.focal_layer_counts, s.focal_units),
            (reference_label, s.reference_layer_counts, s.reference_units),
        ):
            mass = math.fsum(wmap[u] for u in members)
            for layer_name, count in zip(table.layer_names, counts):
                writer.writerow([key, label, layer_name, count, repr(mass)])
    return buf.getvalue()
