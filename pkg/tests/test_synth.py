import io
import math

import pytest

from funnel_equity import synth
from funnel_equity.cem import adjusted_survival_ratio, cem_weights, coarsen, stratify_and_prune
from funnel_equity.errors import ConfigError
from funnel_equity.model import CovariateSpec, GroupLabel

FOCAL = GroupLabel.focal("focal")
REFERENCE = GroupLabel.reference("reference")


def two_strata_spec(seed=0, n=1000):
    return synth.PopulationSpec(
        layers=("base", "converted"),
        covariates=("segment",),
        strata=(
            synth.StratumSpec(("a",), int(0.6 * n), int(0.4 * n), (0.5,), (0.4,)),
            synth.StratumSpec(("b",), int(0.4 * n), int(0.6 * n), (0.3,), (0.35,)),
        ),
        seed=seed,
    )


def engine_adjusted(units, transition=(0, 1)):
    keys = coarsen(units, (CovariateSpec("segment", "categorical"),))
    table = stratify_and_prune(keys, units, transition[0], FOCAL, REFERENCE, ("base", "converted"))
    return adjusted_survival_ratio(table, cem_weights(table), *transition)


class TestGenerate:
    def test_certain_conversion_preserves_counts(self):
        spec = synth.PopulationSpec(
            layers=("l0", "l1", "l2"),
            strata=(synth.StratumSpec((), 50, 70, (1.0, 1.0), (1.0, 1.0)),),
        )
        population = synth.generate_population(spec)
        assert population.focal_layer_totals == (50, 50, 50)
        assert population.reference_layer_totals == (70, 70, 70)
        assert all(all(unit.layer_reached) for unit in population.units)

    def test_zero_conversion_empties_downstream_layers(self):
        spec = synth.PopulationSpec(
            layers=("l0", "l1", "l2"),
            strata=(synth.StratumSpec((), 50, 50, (0.0, 1.0), (0.0, 1.0)),),
        )
        population = synth.generate_population(spec)
        assert population.focal_layer_totals == (50, 0, 0)
        assert population.reference_layer_totals == (50, 0, 0)

    def test_fixed_seed_is_reproducible(self):
        first = synth.generate(two_strata_spec(seed=42))
        second = synth.generate(two_strata_spec(seed=42))
        assert first == second
        assert first != synth.generate(two_strata_spec(seed=43))

    def test_monotone_flags_by_construction(self):
        for unit in synth.generate(two_strata_spec(seed=5)):
            assert unit.monotone

    def test_marginals_within_four_sigma(self):
        spec = two_strata_spec(seed=8, n=10_000)
        population = synth.generate_population(spec)
        for realized, stratum_spec, group in (
            (population.focal_counts, spec.strata, "focal"),
            (population.reference_counts, spec.strata, "reference"),
        ):
            for counts, stratum in zip(realized, stratum_spec):
                base = stratum.focal_base if group == "focal" else stratum.reference_base
                rate = (stratum.focal_rates if group == "focal" else stratum.reference_rates)[0]
                sigma = math.sqrt(base * rate * (1 - rate))
                assert abs(counts[1] - base * rate) <= 4 * sigma

    def test_csv_round_trip_layout(self):
        spec = two_strata_spec(seed=1, n=20)
        population = synth.generate_population(spec)
        buffer = io.StringIO()
        synth.write_units_csv(population.units, buffer, spec.covariates, spec.layers)
        lines = buffer.getvalue().strip().split("\n")
        assert lines[0] == "unit_id,group,segment,base,converted"
        assert len(lines) == 1 + len(population.units)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            synth.PopulationSpec(layers=("only",), strata=(synth.StratumSpec((), 1, 1, (), ()),))
        with pytest.raises(ConfigError):
            synth.StratumSpec((), 10, 10, (1.5,), (0.5,))
        with pytest.raises(ConfigError):
            synth.PopulationSpec(
                layers=("a", "b"),
                strata=(synth.StratumSpec(("x",), 1, 1, (0.5,), (0.5,)),),
            )


class TestOracle:
    def test_single_stratum_hand_arithmetic(self):
        spec = synth.PopulationSpec(
            layers=("base", "converted"),
            strata=(synth.StratumSpec((), 100, 150, (0.15,), (1 / 6,)),),
        )
        assert synth.oracle_adjusted_ratio(spec, 0, 1) == pytest.approx(0.90)

    def test_equal_rates_any_mix_is_exact_parity(self):
        spec = synth.PopulationSpec(
            layers=("base", "converted"),
            covariates=("c",),
            strata=(
                synth.StratumSpec(("a",), 900, 100, (0.7,), (0.7,)),
                synth.StratumSpec(("b",), 100, 900, (0.2,), (0.2,)),
            ),
        )
        assert synth.oracle_adjusted_ratio(spec, 0, 1) == pytest.approx(1.0, abs=1e-15)
        assert abs(synth.oracle_unadjusted_ratio(spec, 0, 1) - 1) > 0.4

    def test_zero_rate_strata_are_pruned_from_later_transitions(self):
        spec = synth.PopulationSpec(
            layers=("l0", "l1", "l2"),
            covariates=("c",),
            strata=(
                synth.StratumSpec(("a",), 100, 100, (0.5, 0.5), (0.5, 0.4)),
                synth.StratumSpec(("b",), 100, 100, (0.0, 0.5), (0.5, 0.5)),
            ),
        )
        # stratum b has no focal units at layer 1, so transition 1->2 uses only a
        assert synth.oracle_adjusted_ratio(spec, 1, 2) == pytest.approx(0.5 / 0.4)

    def test_invalid_transition_rejected(self):
        with pytest.raises(ValueError):
            synth.oracle_adjusted_ratio(two_strata_spec(), 0, 2)

    def test_engine_matches_oracle_within_three_sigma(self):
        spec = two_strata_spec(seed=31, n=10_000)
        units = synth.generate(spec)
        engine = engine_adjusted(units)
        oracle = synth.oracle_adjusted_ratio(spec, 0, 1)
        se = synth.oracle_adjusted_log_se(spec, 0, 1)
        assert abs(math.log(engine) - math.log(oracle)) <= 3 * se

    def test_engine_converges_to_oracle_at_scale(self):
        spec = two_strata_spec(seed=77, n=100_000)
        units = synth.generate(spec)
        engine = engine_adjusted(units)
        oracle = synth.oracle_adjusted_ratio(spec, 0, 1)
        assert engine == pytest.approx(oracle, rel=0.01)


class TestPopulationSpecFile:
    def test_parse_round_trip(self, tmp_path):
        path = tmp_path / "pop.toml"
        path.write_text(
            """
seed = 9
layers = ["base", "converted"]
covariates = ["segment"]

[groups]
focal = "female"
reference = "male"

[[strata]]
buckets = ["a"]
focal_base = 10
reference_base = 20
focal_rates = [0.5]
reference_rates = [0.25]
""",
            encoding="utf-8",
        )
        spec = synth.load_population_spec(path)
        assert spec.seed == 9
        assert spec.focal_name == "female"
        assert spec.strata[0].reference_base == 20
        assert spec.strata[0].focal_rates == (0.5,)

    def test_missing_key_named(self, tmp_path):
        path = tmp_path / "pop.toml"
        path.write_text('layers = ["a", "b"]\n[[strata]]\nfocal_base = 1\n', encoding="utf-8")
        with pytest.raises(ConfigError, match="reference_base|focal_rates"):
            synth.load_population_spec(path)
