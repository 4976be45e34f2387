import math

import pytest
from hypothesis import given, strategies as st

from funnel_equity.errors import UndefinedRatioError
from funnel_equity.metrics import (
    FunnelCounts,
    build_metric_table,
    funnel_survival_ratio,
    layer_counts,
    normalized_ratio,
    raw_ratio,
)
from funnel_equity.model import FunnelSpec, GroupLabel
from funnel_equity.status import Status
from funnel_equity import synth

from conftest import make_unit

FOCAL = GroupLabel.focal("focal")
REFERENCE = GroupLabel.reference("reference")

monotone_counts = st.lists(st.integers(1, 1000), min_size=2, max_size=6).map(
    lambda xs: tuple(sorted(xs, reverse=True))
)


class TestRatios:
    def test_raw_ratio_worked_examples(self):
        assert round(raw_ratio(100_000_000, 150_000_000) * 100, 1) == 66.7
        assert round(raw_ratio(15_000_000, 25_000_000) * 100, 1) == 60.0
        assert raw_ratio(7, 7) == 1.0

    def test_raw_ratio_zero_reference(self):
        with pytest.raises(UndefinedRatioError):
            raw_ratio(5, 0)

    def test_normalized_ratio_worked_examples(self):
        assert round(normalized_ratio(15_000_000, 25_000_000, 100_000_000, 150_000_000), 2) == 0.90
        assert round(normalized_ratio(5_000_000, 10_000_000, 100_000_000, 150_000_000), 2) == 0.75

    def test_normalized_ratio_equal_rates_is_one(self):
        assert normalized_ratio(30, 60, 100, 200) == pytest.approx(1.0)

    def test_normalized_ratio_errors(self):
        with pytest.raises(UndefinedRatioError):
            normalized_ratio(1, 1, 0, 5)
        with pytest.raises(UndefinedRatioError):
            normalized_ratio(1, 0, 5, 5)

    def test_survival_ratio_worked_examples(self):
        assert funnel_survival_ratio(0.90, 1.0) == pytest.approx(0.90)
        assert round(funnel_survival_ratio(0.75, 0.90) * 100, 1) == 83.3

    def test_survival_ratio_identity(self):
        assert funnel_survival_ratio(0.4, 0.4) == 1.0

    def test_survival_ratio_zero_prev(self):
        with pytest.raises(UndefinedRatioError):
            funnel_survival_ratio(0.5, 0.0)


class TestFunnelCounts:
    def test_rejects_non_monotone(self):
        with pytest.raises(ValueError):
            FunnelCounts(("a", "b"), (1, 2), (2, 1))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            FunnelCounts(("a", "b"), (1, -1), (2, 1))

    def test_flags_zero_reference_layers(self):
        counts = FunnelCounts(("a", "b", "c"), (4, 2, 1), (5, 0, 0))
        assert counts.zero_reference_layers == ("b", "c")


class TestLayerCounts:
    def test_direct_count(self):
        units = [
            make_unit("f1", "focal", (1, 1, 0)),
            make_unit("f2", "focal", (1, 1, 0)),
            make_unit("r1", "reference", (1, 0, 0)),
        ]
        counts = layer_counts(units, FunnelSpec(("a", "b", "c")), FOCAL, REFERENCE)
        assert counts.focal == (2, 2, 0)
        assert counts.reference == (1, 0, 0)

    def test_empty_units_give_zero_counts(self):
        counts = layer_counts([], FunnelSpec(("a", "b")), FOCAL, REFERENCE)
        assert counts.focal == (0, 0)
        assert counts.reference == (0, 0)

    def test_other_groups_ignored(self):
        units = [make_unit("x", "nonbinary", (1, 1)), make_unit("f", "focal", (1, 0))]
        counts = layer_counts(units, FunnelSpec(("a", "b")), FOCAL, REFERENCE)
        assert counts.focal == (1, 0)
        assert counts.reference == (0, 0)

    def test_matches_generator_bookkeeping(self):
        spec = synth.PopulationSpec(
            layers=("l0", "l1", "l2"),
            covariates=("c",),
            strata=(
                synth.StratumSpec(("a",), 400, 300, (0.6, 0.5), (0.5, 0.4)),
                synth.StratumSpec(("b",), 100, 250, (0.3, 0.9), (0.4, 0.8)),
            ),
            seed=99,
        )
        population = synth.generate_population(spec)
        counts = layer_counts(
            population.units,
            FunnelSpec(spec.layers),
            GroupLabel.focal(spec.focal_name),
            GroupLabel.reference(spec.reference_name),
        )
        assert counts.focal == population.focal_layer_totals
        assert counts.reference == population.reference_layer_totals

    def test_arity_mismatch_raises(self):
        with pytest.raises(ValueError):
            layer_counts([make_unit("u", "focal", (1,))], FunnelSpec(("a", "b")), FOCAL, REFERENCE)


class TestMetricTable:
    def test_table1_reproduction(self, table1_counts):
        table = build_metric_table(table1_counts)
        raw = [round(l.raw_ratio * 100, 1) for l in table.layers]
        normalized = [round(l.normalized_ratio * 100, 1) for l in table.layers]
        survival = [round(t.survival_ratio * 100, 1) for t in table.transitions]
        assert raw == [66.7, 60.0, 50.0]
        assert normalized == [100.0, 90.0, 75.0]
        assert survival == [90.0, 83.3]
        assert all(t.adjusted_ratio is None for t in table.transitions)

    def test_base_normalized_is_exactly_one(self, table1_counts):
        assert build_metric_table(table1_counts).layers[0].normalized_ratio == 1.0

    def test_balanced_counts_give_unit_ratios(self):
        table = build_metric_table(FunnelCounts(("a", "b"), (50, 10), (50, 10)))
        assert all(l.raw_ratio == 1.0 and l.normalized_ratio == 1.0 for l in table.layers)
        assert table.transitions[0].survival_ratio == 1.0

    def test_two_layer_funnel_has_one_transition(self):
        table = build_metric_table(FunnelCounts(("a", "b"), (10, 5), (10, 4)))
        assert len(table.transitions) == 1

    def test_empty_base_raises_with_layer_name(self):
        with pytest.raises(UndefinedRatioError, match="base"):
            build_metric_table(FunnelCounts(("base", "b"), (0, 0), (5, 1)))

    def test_zero_reference_layer_raises_with_layer_name(self):
        with pytest.raises(UndefinedRatioError, match="last"):
            build_metric_table(FunnelCounts(("base", "last"), (10, 3), (10, 0)))

    def test_with_adjusted_fills_one_transition(self, table1_counts):
        table = build_metric_table(table1_counts).with_adjusted(0, 0.95, 0.942, 0.948, Status.YELLOW)
        first, second = table.transitions
        assert first.adjusted_ratio == 0.95
        assert (first.adjusted_ci_low, first.adjusted_ci_high) == (0.942, 0.948)
        assert first.status is Status.YELLOW
        assert second.adjusted_ratio is None

    @given(monotone_counts, monotone_counts)
    def test_survival_equals_conditional_conversion_ratio(self, focal, reference):
        n = min(len(focal), len(reference))
        focal, reference = focal[:n], reference[:n]
        table = build_metric_table(FunnelCounts(tuple(f"l{i}" for i in range(n)), focal, reference))
        for k, transition in enumerate(table.transitions, start=1):
            conversion_ratio = (focal[k] / focal[k - 1]) / (reference[k] / reference[k - 1])
            assert math.isclose(transition.survival_ratio, conversion_ratio, rel_tol=1e-12)

    @given(monotone_counts, monotone_counts, st.integers(2, 50))
    def test_scaling_invariance(self, focal, reference, scale):
        n = min(len(focal), len(reference))
        focal, reference = focal[:n], reference[:n]
        layers = tuple(f"l{i}" for i in range(n))
        base = build_metric_table(FunnelCounts(layers, focal, reference))
        scaled = build_metric_table(
            FunnelCounts(layers, tuple(f * scale for f in focal), tuple(r * scale for r in reference))
        )
        for a, b in zip(base.layers, scaled.layers):
            assert math.isclose(a.normalized_ratio, b.normalized_ratio, rel_tol=1e-12)
        for a, b in zip(base.transitions, scaled.transitions):
            assert math.isclose(a.survival_ratio, b.survival_ratio, rel_tol=1e-12)

    @given(monotone_counts, monotone_counts)
    def test_table_invariants(self, focal, reference):
        n = min(len(focal), len(reference))
        table = build_metric_table(
            FunnelCounts(tuple(f"l{i}" for i in range(n)), focal[:n], reference[:n])
        )
        assert table.layers[0].normalized_ratio == 1.0
        assert len(table.transitions) == n - 1
        for k, transition in enumerate(table.transitions, start=1):
            expected = table.layers[k].normalized_ratio / table.layers[k - 1].normalized_ratio
            assert transition.survival_ratio == expected
