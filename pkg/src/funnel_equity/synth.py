"""Seeded synthetic populations with closed-form ground truth.

Populations are defined stratum by stratum: a covariate bucket tuple, base
counts per group, and per-transition conversion probabilities per group.
Generation draws one uniform per unit per transition from a PCG64 stream
(consumed whether or not the unit is still alive, so streams are stable),
with an independent child seed per stratum spawned from the root seed.
The oracle functions evaluate the matching weights and the adjusted ratio
on expected (real-valued) counts, with no sampling, so engine output on
generated data can be checked against an independent closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .model import UnitRecord


@dataclass(frozen=True)
class StratumSpec:
    """One stratum: bucket tuple, base counts, per-transition conversion rates."""

    buckets: tuple[str, ...]
    focal_base: int
    reference_base: int
    focal_rates: tuple[float, ...]
    reference_rates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "buckets", tuple(str(b) for b in self.buckets))
        object.__setattr__(self, "focal_rates", tuple(float(r) for r in self.focal_rates))
        object.__setattr__(self, "reference_rates", tuple(float(r) for r in self.reference_rates))
        if self.focal_base < 0 or self.reference_base < 0:
            raise ConfigError("base counts must be non-negative")
        for rates in (self.focal_rates, self.reference_rates):
            if any(not 0 <= r <= 1 for r in rates):
                raise ConfigError(f"conversion probabilities must be in [0, 1], got {rates}")
        if len(self.focal_rates) != len(self.reference_rates):
            raise ConfigError("both groups need one conversion rate per transition")


@dataclass(frozen=True)
class PopulationSpec:
    layers: tuple[str, ...]
    strata: tuple[StratumSpec, ...]
    covariates: tuple[str, ...] = ()
    focal_name: str = "focal"
    reference_name: str = "reference"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "strata", tuple(self.strata))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if len(self.layers) < 2:
            raise ConfigError("population needs at least 2 layers")
        if not self.strata:
            raise ConfigError("population needs at least one stratum")
        n_trans = len(self.layers) - 1
        for i, s in enumerate(self.strata):
            if len(s.focal_rates) != n_trans:
                raise ConfigError(
                    f"strata[{i}]: {len(s.focal_rates)} conversion rates for {n_trans} transitions"
                )
            if len(s.buckets) != len(self.covariates):
                raise ConfigError(
                    f"strata[{i}]: {len(s.buckets)} buckets for {len(self.covariates)} covariates"
                )
        if self.focal_name == self.reference_name:
            raise ConfigError("focal and reference names must differ")

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class Population:
    """Generated units plus the generator's own per-stratum bookkeeping."""

    spec: PopulationSpec
    units: tuple[UnitRecord, ...]
    focal_counts: tuple[tuple[int, ...], ...]
    reference_counts: tuple[tuple[int, ...], ...]

    @cached_property
    def focal_layer_totals(self) -> tuple[int, ...]:
        return tuple(sum(col) for col in zip(*self.focal_counts))

    @cached_property
    def reference_layer_totals(self) -> tuple[int, ...]:
        return tuple(sum(col) for col in zip(*self.reference_counts))


def _simulate(rng: np.random.Generator, n: int, rates: Sequence[float], n_layers: int) -> np.ndarray:
    flags = np.zeros((n, n_layers), dtype=bool)
    if n == 0:
        return flags
    flags[:, 0] = True
    alive = np.ones(n, dtype=bool)
    for t, rate in enumerate(rates):
        draws = rng.random(n)  # one uniform per unit per transition, always
        alive = alive & (draws < rate)
        flags[:, t + 1] = alive
    return flags


def generate_population(spec: PopulationSpec) -> Population:
    """Draw the population and record realized per-stratum layer counts.

    Deterministic for a given spec: stratum i uses the i-th child of
    SeedSequence(spec.seed), split once more into a focal and a reference
    stream.
    """
    children = np.random.SeedSequence(spec.seed).spawn(len(spec.strata))
    units: list[UnitRecord] = []
    focal_counts: list[tuple[int, ...]] = []
    reference_counts: list[tuple[int, ...]] = []
    for si, stratum in enumerate(spec.strata):
        focal_seed, reference_seed = children[si].spawn(2)
        for group, base, rates, seed, sink in (
            (spec.focal_name, stratum.focal_base, stratum.focal_rates, focal_seed, focal_counts),
            (spec.reference_name, stratum.reference_base, stratum.reference_rates, reference_seed, reference_counts),
        ):
            rng = np.random.Generator(np.random.PCG64(seed))
            flags = _simulate(rng, base, rates, spec.n_layers)
            sink.append(tuple(int(c) for c in flags.sum(axis=0)))
            units.extend(
                UnitRecord(f"{group}-s{si}-u{i}", group, stratum.buckets, tuple(bool(f) for f in row))
                for i, row in enumerate(flags)
            )
    return Population(spec, tuple(units), tuple(focal_counts), tuple(reference_counts))


def generate(spec: PopulationSpec) -> tuple[UnitRecord, ...]:
    """Just the units; see generate_population for the bookkeeping variant."""
    return generate_population(spec).units


def _expected_counts(spec: PopulationSpec, layer: int) -> tuple[list[float], list[float]]:
    focal = []
    reference = []
    for s in spec.strata:
        focal.append(s.focal_base * math.prod(s.focal_rates[:layer]))
        reference.append(s.reference_base * math.prod(s.reference_rates[:layer]))
    return focal, reference


def _check_transition(spec: PopulationSpec, from_layer: int, to_layer: int) -> None:
    if not 0 <= from_layer < spec.n_layers - 1 or to_layer != from_layer + 1:
        raise ValueError(f"invalid transition ({from_layer}, {to_layer}) for {spec.n_layers} layers")


def oracle_adjusted_ratio(spec: PopulationSpec, from_layer: int, to_layer: int) -> float:
    """Adjusted survival ratio evaluated on expected counts; no sampling.

    Matching weights are computed from expected stratum sizes at the
    upstream layer, and each stratum's conversion rate is the spec's true
    probability. Strata whose expected count vanishes for either group are
    pruned, mirroring the engine.
    """
    _check_transition(spec, from_layer, to_layer)
    e_focal, e_reference = _expected_counts(spec, from_layer)
    matched = [i for i in range(len(spec.strata)) if e_focal[i] > 0 and e_reference[i] > 0]
    if not matched:
        raise ValueError("no stratum has expected units of both groups at the upstream layer")
    m_t = math.fsum(e_focal[i] for i in matched)
    m_c = math.fsum(e_reference[i] for i in matched)
    m = m_t + m_c
    num_f = den_f = num_r = den_r = 0.0
    for i in matched:
        share = (e_focal[i] + e_reference[i]) / m
        w_f = (m_t / e_focal[i]) * share
        w_r = (m_c / e_reference[i]) * share
        mass_f = e_focal[i] * w_f
        mass_r = e_reference[i] * w_r
        num_f += spec.strata[i].focal_rates[from_layer] * mass_f
        den_f += mass_f
        num_r += spec.strata[i].reference_rates[from_layer] * mass_r
        den_r += mass_r
    return (num_f / den_f) / (num_r / den_r)


def oracle_unadjusted_ratio(spec: PopulationSpec, from_layer: int, to_layer: int) -> float:
    """Population-level expected survival ratio, without any matching."""
    _check_transition(spec, from_layer, to_layer)
    e_focal, e_reference = _expected_counts(spec, from_layer)
    conv_f = math.fsum(e * s.focal_rates[from_layer] for e, s in zip(e_focal, spec.strata))
    conv_r = math.fsum(e * s.reference_rates[from_layer] for e, s in zip(e_reference, spec.strata))
    return (conv_f / math.fsum(e_focal)) / (conv_r / math.fsum(e_reference))


def oracle_adjusted_log_se(spec: PopulationSpec, from_layer: int, to_layer: int) -> float:
    """Delta-method standard error of the engine's log adjusted ratio.

    Treats stratum sizes as fixed at their expectations, so each stratum
    conversion count is binomial; used to budget engine-vs-oracle sampling
    error.
    """
    _check_transition(spec, from_layer, to_layer)
    e_focal, e_reference = _expected_counts(spec, from_layer)
    matched = [i for i in range(len(spec.strata)) if e_focal[i] > 0 and e_reference[i] > 0]
    m = math.fsum(e_focal[i] + e_reference[i] for i in matched)
    total = 0.0
    for group_expected, rates_of in (
        (e_focal, lambda s: s.focal_rates),
        (e_reference, lambda s: s.reference_rates),
    ):
        mean = 0.0
        var = 0.0
        for i in matched:
            share = (e_focal[i] + e_reference[i]) / m
            p = rates_of(spec.strata[i])[from_layer]
            mean += share * p
            var += share * share * p * (1 - p) / group_expected[i]
        total += var / (mean * mean)
    return math.sqrt(total)


def write_units_csv(
    units: Iterable[UnitRecord],
    out: IO[str] | str | Path,
    covariate_names: Sequence[str],
    layer_names: Sequence[str],
) -> None:
    """Write units in the CSV layout the ingest module reads back.

    Columns: unit_id, group, one per covariate, one 0/1 flag per layer.
    """
    own = isinstance(out, (str, Path))
    handle = open(out, "w", encoding="utf-8", newline="") if own else out
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["unit_id", "group", *covariate_names, *layer_names])
        for unit in units:
            writer.writerow(
                [unit.unit_id, unit.group]
                + [str(v) for v in unit.covariates]
                + [int(flag) for flag in unit.layer_reached]
            )
    finally:
        if own:
            handle.close()


def load_population_spec(path: str | Path) -> PopulationSpec:
    """Parse a population spec from its TOML file (see README for the keys)."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid population spec: {exc}") from None
    try:
        layers = data["layers"]
        raw_strata = data["strata"]
    except KeyError as exc:
        raise ConfigError(f"population spec missing required key {exc.args[0]!r}") from None
    groups = data.get("groups", {})
    strata = []
    for i, entry in enumerate(raw_strata):
        try:
            strata.append(
                StratumSpec(
                    buckets=tuple(entry.get("buckets", ())),
                    focal_base=int(entry["focal_base"]),
                    reference_base=int(entry["reference_base"]),
                    focal_rates=tuple(entry["focal_rates"]),
                    reference_rates=tuple(entry["reference_rates"]),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"strata[{i}] missing required key {exc.args[0]!r}") from None
    return PopulationSpec(
        layers=tuple(layers),
        strata=tuple(strata),
        covariates=tuple(data.get("covariates", ())),
        focal_name=str(groups.get("focal", "focal")),
        reference_name=str(groups.get("reference", "reference")),
        seed=int(data.get("seed", 0)),
    )
