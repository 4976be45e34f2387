"""Command-line orchestration: load, match, measure, classify, report.

Exit codes are stable API: 0 success, 1 input/validation error, 2 when any
transition classifies Red (so CI pipelines can gate on representation
health). All randomness flows from --seed (or FUNNEL_EQUITY_SEED); repeated
invocations with the same inputs and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

from . import cem, inference, synth
from .errors import ConfigError, FunnelEquityError
from .ingest import (
    ColumnMapping,
    load_column_mapping,
    load_config,
    load_counts,
    load_units,
    scan_units,
)
from .metrics import FunnelCounts, MetricTable, build_metric_table, layer_counts
from .model import AnalysisConfig, UnitRecord, validate_config
from .report import (
    ExperimentReport,
    GroupConversionLift,
    RenderOptions,
    TransitionComparison,
    render_experiment_table,
    render_funnel_table,
)
from .status import Status, ThresholdProfile, classify, profile_from_name


@dataclass(frozen=True)
class FunnelAnalysis:
    """One arm's full measurement: counts, metric table, per-transition estimates."""

    config: AnalysisConfig
    counts: FunnelCounts
    table: MetricTable
    estimates: tuple[inference.TransitionEstimate, ...]
    stratum_tables: tuple[cem.StratumTable, ...] = ()
    weights: tuple[tuple[cem.WeightedUnit, ...], ...] = ()

    @property
    def has_red(self) -> bool:
        return any(t.status is Status.RED for t in self.table.transitions)


def analyze_funnel(
    config: AnalysisConfig,
    units: Sequence[UnitRecord],
    profile: ThresholdProfile | None = None,
    ci_mode: str = "katz",
    seed: int = 0,
) -> FunnelAnalysis:
    """Measure one unit collection: unadjusted metrics plus, per transition,
    the matching-adjusted ratio, its confidence interval, and color status.

    Matching is redone at each transition's upstream layer. Confidence
    intervals use the analytic log-variance with weighted rates and Kish
    effective sample sizes; ``ci_mode="bootstrap"`` swaps in the seeded
    percentile bootstrap as a cross-check.
    """
    if ci_mode not in ("katz", "bootstrap"):
        raise ConfigError(f"ci_mode must be 'katz' or 'bootstrap', got {ci_mode!r}")
    profile = profile or config.color_profile
    funnel = config.funnel
    focal, reference = config.focal_group, config.reference_group
    counts = layer_counts(units, funnel, focal, reference)
    table = build_metric_table(counts)

    keys = cem.coarsen(units, config.covariates)
    by_id = {u.unit_id: u for u in units} if ci_mode == "bootstrap" else {}
    estimates: list[inference.TransitionEstimate] = []
    stratum_tables: list[cem.StratumTable] = []
    weight_sets: list[tuple[cem.WeightedUnit, ...]] = []

    for index, (from_layer, to_layer) in enumerate(funnel.transitions()):
        strata = cem.stratify_and_prune(keys, units, from_layer, focal, reference, funnel.layers)
        weights = cem.cem_weights(strata)
        adjusted = cem.adjusted_survival_ratio(strata, weights, from_layer, to_layer)
        rate_f, rate_r = cem.weighted_conversion_rates(strata, weights, from_layer, to_layer)
        per_stratum = cem.stratum_weights(strata)
        focal_weights = [per_stratum[s.key][0] for s in strata.matched_strata for _ in s.focal_units]
        reference_weights = [
            per_stratum[s.key][1] for s in strata.matched_strata for _ in s.reference_units
        ]
        estimate = inference.estimate_survival_ratio(
            rate_f,
            inference.effective_sample_size(focal_weights),
            rate_r,
            inference.effective_sample_size(reference_weights),
            config.confidence_level,
            point=adjusted,
        )
        if ci_mode == "bootstrap":
            low, high = _bootstrap_interval(
                strata, per_stratum, by_id, to_layer, config.confidence_level, [seed, index]
            )
            estimate = dataclasses.replace(
                estimate, ci_low=min(low, estimate.point), ci_high=max(high, estimate.point)
            )
        status = classify(adjusted, profile)
        table = table.with_adjusted(index, adjusted, estimate.ci_low, estimate.ci_high, status)
        estimates.append(
            inference.TransitionEstimate(funnel.layers[from_layer], funnel.layers[to_layer], estimate)
        )
        stratum_tables.append(strata)
        weight_sets.append(weights)

    return FunnelAnalysis(config, counts, table, tuple(estimates), tuple(stratum_tables), tuple(weight_sets))


def _bootstrap_interval(strata, per_stratum, by_id, to_layer, level, seed):
    outcomes_f: list[int] = []
    outcomes_r: list[int] = []
    weights_f: list[float] = []
    weights_r: list[float] = []
    for s in strata.matched_strata:
        w_f, w_r = per_stratum[s.key]
        for uid in s.focal_units:
            outcomes_f.append(1 if by_id[uid].reached(to_layer) else 0)
            weights_f.append(w_f)
        for uid in s.reference_units:
            outcomes_r.append(1 if by_id[uid].reached(to_layer) else 0)
            weights_r.append(w_r)
    return inference.bootstrap_sr_confidence_interval(
        outcomes_f, outcomes_r, level, seed=seed, focal_weights=weights_f, reference_weights=weights_r
    )


def analyze_counts(
    config: AnalysisConfig,
    counts: FunnelCounts,
    profile: ThresholdProfile | None = None,
) -> FunnelAnalysis:
    """The unadjusted path for pre-aggregated counts.

    Only valid without covariates (a single universal stratum, where the
    adjusted ratio equals the unadjusted one exactly); covariate adjustment
    needs unit-level data and is rejected here.
    """
    if config.covariates:
        raise ConfigError(
            "covariate adjustment requires unit-level data; pre-aggregated counts "
            "serve the unadjusted path only"
        )
    profile = profile or config.color_profile
    table = build_metric_table(counts)
    estimates: list[inference.TransitionEstimate] = []
    for index, (from_layer, to_layer) in enumerate(config.funnel.transitions()):
        p = counts.focal[to_layer] / counts.focal[from_layer]
        q = counts.reference[to_layer] / counts.reference[from_layer]
        estimate = inference.estimate_survival_ratio(
            p,
            counts.focal[from_layer],
            q,
            counts.reference[from_layer],
            config.confidence_level,
            point=table.transitions[index].survival_ratio,
        )
        status = classify(estimate.point, profile)
        table = table.with_adjusted(index, estimate.point, estimate.ci_low, estimate.ci_high, status)
        estimates.append(
            inference.TransitionEstimate(
                config.funnel.layers[from_layer], config.funnel.layers[to_layer], estimate
            )
        )
    return FunnelAnalysis(config, counts, table, tuple(estimates))


def _emit(doc: str, out_path: str | None, stdout: IO[str]) -> None:
    if out_path:
        Path(out_path).write_text(doc, encoding="utf-8")
    else:
        stdout.write(doc)


def _load_validated_units(config, mapping, units_path) -> list[UnitRecord]:
    units = load_units(units_path, mapping, covariates=config.covariates, valid_groups=config.group_names)
    report = validate_config(config, units)
    if not report.ok:
        raise ConfigError(f"validation failed:\n{report.render()}")
    return units


def run_measure(
    config_path: str,
    units_path: str | None = None,
    counts_path: str | None = None,
    out_path: str | None = None,
    fmt: str = "text",
    profile: str | None = None,
    ci_mode: str = "katz",
    seed: int = 0,
    dump_strata: str | None = None,
    stdout: IO[str] | None = None,
) -> int:
    """Measure one population and render the funnel table; 2 when any Red."""
    stdout = stdout or sys.stdout
    config = load_config(config_path)
    chosen = profile_from_name(profile) if profile else None
    if counts_path:
        counts = load_counts(counts_path, config.funnel)
        analysis = analyze_counts(config, counts, chosen)
    else:
        if not units_path:
            raise ConfigError("measure needs --units or --counts")
        mapping = load_column_mapping(config_path, config)
        units = _load_validated_units(config, mapping, units_path)
        analysis = analyze_funnel(config, units, chosen, ci_mode, seed)
    opts = RenderOptions(format=fmt)
    doc = render_funnel_table(
        analysis.table, opts, config.focal_group.name, config.reference_group.name
    )
    _emit(doc, out_path, stdout)
    if dump_strata:
        _dump_strata(analysis, dump_strata, config)
    return 2 if analysis.has_red else 0


def _dump_strata(analysis: FunnelAnalysis, path: str, config: AnalysisConfig) -> None:
    target = Path(path)
    for strata, weights in zip(analysis.stratum_tables, analysis.weights):
        if len(analysis.stratum_tables) > 1:
            where = target.with_name(f"{target.stem}_t{strata.matching_layer}{target.suffix}")
        else:
            where = target
        where.write_text(
            cem.strata_dump_csv(strata, weights, config.focal_group.name, config.reference_group.name),
            encoding="utf-8",
        )


def run_abtest(
    config_path: str,
    treatment_path: str,
    control_path: str,
    out_path: str | None = None,
    fmt: str = "text",
    profile: str | None = None,
    ci_mode: str = "katz",
    seed: int = 0,
    stdout: IO[str] | None = None,
) -> int:
    """Compare two arms transition by transition and render the experiment table."""
    stdout = stdout or sys.stdout
    config = load_config(config_path)
    mapping = load_column_mapping(config_path, config)
    chosen = profile_from_name(profile) if profile else None
    arms = {}
    for name, path in (("treatment", treatment_path), ("control", control_path)):
        units = _load_validated_units(config, mapping, path)
        arms[name] = analyze_funnel(config, units, chosen, ci_mode, seed)
    comparisons = []
    for index, (from_layer, to_layer) in enumerate(config.funnel.transitions()):
        comparisons.append(
            _compare_transition(config, arms["treatment"], arms["control"], index, from_layer, to_layer)
        )
    result = ExperimentReport(
        config.funnel.layers,
        config.focal_group.name,
        config.reference_group.name,
        arms["control"].table,
        arms["treatment"].table,
        tuple(comparisons),
    )
    _emit(render_experiment_table(result, RenderOptions(format=fmt)), out_path, stdout)
    return 0


def _group_lift(label, t_counts, c_counts, side, from_layer, to_layer) -> GroupConversionLift:
    counts_t = t_counts.focal if side == "focal" else t_counts.reference
    counts_c = c_counts.focal if side == "focal" else c_counts.reference
    rate_t = counts_t[to_layer] / counts_t[from_layer]
    rate_c = counts_c[to_layer] / counts_c[from_layer]
    z = 0.0
    if rate_t != rate_c:
        variance = inference.log_sr_variance(rate_t, counts_t[from_layer], rate_c, counts_c[from_layer])
        z = inference.z_score(rate_t, rate_c, variance)
    return GroupConversionLift(label, rate_c, rate_t, rate_t / rate_c - 1.0, inference.p_value(z))


def _compare_transition(config, treatment, control, index, from_layer, to_layer) -> TransitionComparison:
    focal_lift = _group_lift(
        config.focal_group.name, treatment.counts, control.counts, "focal", from_layer, to_layer
    )
    reference_lift = _group_lift(
        config.reference_group.name, treatment.counts, control.counts, "reference", from_layer, to_layer
    )
    lift = inference.compare_experiments(treatment.estimates[index], control.estimates[index])
    return TransitionComparison(
        config.funnel.layers[from_layer],
        config.funnel.layers[to_layer],
        focal_lift,
        reference_lift,
        control.table.transitions[index].survival_ratio,
        treatment.table.transitions[index].survival_ratio,
        control.estimates[index].estimate,
        treatment.estimates[index].estimate,
        lift,
    )


def run_generate(
    spec_path: str,
    out_path: str,
    seed: int | None = None,
    stdout: IO[str] | None = None,
) -> int:
    """Generate a synthetic population CSV and print its oracle ratios."""
    stdout = stdout or sys.stdout
    spec = synth.load_population_spec(spec_path)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    population = synth.generate_population(spec)
    synth.write_units_csv(population.units, out_path, spec.covariates, spec.layers)
    for from_layer in range(spec.n_layers - 1):
        span = f"{spec.layers[from_layer]}->{spec.layers[from_layer + 1]}"
        try:
            ratio = f"{synth.oracle_adjusted_ratio(spec, from_layer, from_layer + 1):.6f}"
        except ValueError:
            ratio = "n.a."  # no expected overlap at this transition
        stdout.write(f"oracle_adjusted_ratio[{span}] = {ratio}\n")
    return 0


def run_validate(
    config_path: str,
    units_path: str,
    stdout: IO[str] | None = None,
) -> int:
    """Report every data problem; exit 0 only on a clean file."""
    stdout = stdout or sys.stdout
    config = load_config(config_path)
    mapping = load_column_mapping(config_path, config)
    units, scan_violations = scan_units(
        units_path, mapping, covariates=config.covariates, valid_groups=config.group_names
    )
    violations = list(scan_violations) + list(validate_config(config, units).violations)
    if not violations:
        stdout.write("valid: no violations\n")
        return 0
    for violation in violations:
        stdout.write(f"{violation}\n")
    return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funnel-equity", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, units=False):
        p.add_argument("--config", required=True, help="analysis config (TOML)")
        if units:
            p.add_argument("--units", help="unit-level CSV or JSONL file")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("text", "csv"), default="text")
        p.add_argument("--profile", help="strict | middle | loose | custom(green,red)")
        p.add_argument("--ci-mode", choices=("katz", "bootstrap"), default="katz")
        p.add_argument("--seed", type=int, default=None)

    measure = sub.add_parser("measure", help="funnel table with all four metrics")
    common(measure, units=True)
    measure.add_argument("--counts", help="pre-aggregated counts CSV (unadjusted path only)")
    measure.add_argument("--dump-strata", help="write a strata audit CSV per transition")

    abtest = sub.add_parser("abtest", help="treatment vs control representation shifts")
    common(abtest)
    abtest.add_argument("--treatment", required=True)
    abtest.add_argument("--control", required=True)

    generate = sub.add_parser("generate", help="synthesize a seeded population CSV")
    generate.add_argument("--spec", required=True, help="population spec (TOML)")
    generate.add_argument("--out", required=True)
    generate.add_argument("--seed", type=int, default=None)

    validate = sub.add_parser("validate", help="audit a unit file against the config")
    validate.add_argument("--config", required=True)
    validate.add_argument("--units", required=True)
    return parser


def _seed_override(args) -> int | None:
    """--seed wins, then FUNNEL_EQUITY_SEED, then None (command default)."""
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("FUNNEL_EQUITY_SEED")
    if not env:
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"FUNNEL_EQUITY_SEED must be an integer, got {env!r}") from None


def _seed_from(args) -> int:
    seed = _seed_override(args)
    return 0 if seed is None else seed


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "measure":
            if bool(args.units) == bool(args.counts):
                raise ConfigError("measure needs exactly one of --units or --counts")
            return run_measure(
                args.config,
                units_path=args.units,
                counts_path=args.counts,
                out_path=args.out,
                fmt=args.format,
                profile=args.profile,
                ci_mode=args.ci_mode,
                seed=_seed_from(args),
                dump_strata=args.dump_strata,
            )
        if args.command == "abtest":
            return run_abtest(
                args.config,
                args.treatment,
                args.control,
                out_path=args.out,
                fmt=args.format,
                profile=args.profile,
                ci_mode=args.ci_mode,
                seed=_seed_from(args),
            )
        if args.command == "generate":
            return run_generate(args.spec, args.out, seed=_seed_override(args))
        return run_validate(args.config, args.units)
    except FunnelEquityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
