"""Render funnel and experiment tables as aligned text or CSV.

Text mode mirrors the classic funnel-report layout: percentages at a configurable
number of decimals, "n.a." for undefined base-layer cells, and the key
treatment cell of an experiment wrapped in ** markers. CSV mode carries the
rounded percent columns and, in parallel, the raw unrounded ratios so that
pipelines never re-parse rounded values. Output is deterministic:
byte-identical for identical inputs and options.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .errors import ConfigError
from .inference import LiftResult, RatioEstimate
from .metrics import MetricTable

NA = "n.a."


@dataclass(frozen=True)
class RenderOptions:
    format: str = "text"
    percent_digits: int = 1
    show_ci: bool = True
    show_status: bool = True

    def __post_init__(self):
        if self.format not in ("text", "csv"):
            raise ConfigError(f"format must be 'text' or 'csv', got {self.format!r}")
        if not 0 <= self.percent_digits <= 4:
            raise ConfigError(f"percent_digits must be in [0, 4], got {self.percent_digits}")


@dataclass(frozen=True)
class GroupConversionLift:
    """Per-group conversion rates across arms, with the rate lift and p-value."""

    group: str
    control_rate: float
    treatment_rate: float
    lift: float
    p_value: float


@dataclass(frozen=True)
class TransitionComparison:
    from_layer: str
    to_layer: str
    focal: GroupConversionLift
    reference: GroupConversionLift
    control_survival: float
    treatment_survival: float
    control_adjusted: RatioEstimate
    treatment_adjusted: RatioEstimate
    adjusted_lift: LiftResult


@dataclass(frozen=True)
class ExperimentReport:
    """Treatment vs control metric tables plus per-transition comparisons."""

    layers: tuple[str, ...]
    focal_label: str
    reference_label: str
    control: MetricTable
    treatment: MetricTable
    transitions: tuple[TransitionComparison, ...]


def _pct(value: float, digits: int) -> str:
    return f"{value * 100:.{digits}f}%"


def _pct_number(value: float, digits: int) -> str:
    return f"{value * 100:.{digits}f}"


def _p_str(p: float) -> str:
    return f"{p:.2f}"


def _layout(rows: list[list[str]], left_columns: set[int]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [
            cell.ljust(widths[i]) if i in left_columns else cell.rjust(widths[i])
            for i, cell in enumerate(row)
        ]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def render_funnel_table(
    table: MetricTable,
    opts: RenderOptions = RenderOptions(),
    focal_label: str = "focal",
    reference_label: str = "reference",
) -> str:
    """One row per layer; transition metrics print on the downstream row."""
    if opts.format == "csv":
        return _funnel_csv(table, opts)
    d = opts.percent_digits
    header = [
        "Step",
        "Funnel Event",
        f"{focal_label} obs",
        f"{reference_label} obs",
        "Raw Ratio",
        "Normalized Ratio",
        "Funnel Survival Ratio",
        "Adjusted Funnel Survival Ratio",
    ]
    if opts.show_status:
        header.append("Status")
    rows = [header]
    for i, layer in enumerate(table.layers):
        transition = table.transitions[i - 1] if i > 0 else None
        survival = _pct(transition.survival_ratio, d) if transition else NA
        adjusted = NA
        status = NA
        if transition and transition.adjusted_ratio is not None:
            adjusted = _pct(transition.adjusted_ratio, d)
            if opts.show_ci and transition.adjusted_ci_low is not None:
                adjusted += (
                    f" (CI {_pct(transition.adjusted_ci_low, d)}-{_pct(transition.adjusted_ci_high, d)})"
                )
            if transition.status is not None:
                status = transition.status.value
        row = [
            str(i + 1),
            layer.layer,
            str(layer.focal_count),
            str(layer.reference_count),
            _pct(layer.raw_ratio, d),
            _pct(layer.normalized_ratio, d),
            survival,
            adjusted,
        ]
        if opts.show_status:
            row.append(status)
        rows.append(row)
    return _layout(rows, left_columns={1})


def _funnel_csv(table: MetricTable, opts: RenderOptions) -> str:
    d = opts.percent_digits
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "step",
            "layer",
            "focal_obs",
            "reference_obs",
            "raw_ratio_pct",
            "normalized_ratio_pct",
            "survival_ratio_pct",
            "adjusted_ratio_pct",
            "adjusted_ci_low_pct",
            "adjusted_ci_high_pct",
            "status",
            "raw_ratio",
            "normalized_ratio",
            "survival_ratio",
            "adjusted_ratio",
            "adjusted_ci_low",
            "adjusted_ci_high",
        ]
    )
    for i, layer in enumerate(table.layers):
        transition = table.transitions[i - 1] if i > 0 else None
        adjusted = transition.adjusted_ratio if transition else None
        writer.writerow(
            [
                i + 1,
                layer.layer,
                layer.focal_count,
                layer.reference_count,
                _pct_number(layer.raw_ratio, d),
                _pct_number(layer.normalized_ratio, d),
                _pct_number(transition.survival_ratio, d) if transition else "",
                _pct_number(adjusted, d) if adjusted is not None else "",
                _pct_number(transition.adjusted_ci_low, d)
                if transition and transition.adjusted_ci_low is not None
                else "",
                _pct_number(transition.adjusted_ci_high, d)
                if transition and transition.adjusted_ci_high is not None
                else "",
                transition.status.value if transition and transition.status is not None else "",
                repr(layer.raw_ratio),
                repr(layer.normalized_ratio),
                repr(transition.survival_ratio) if transition else "",
                repr(adjusted) if adjusted is not None else "",
                repr(transition.adjusted_ci_low)
                if transition and transition.adjusted_ci_low is not None
                else "",
                repr(transition.adjusted_ci_high)
                if transition and transition.adjusted_ci_high is not None
                else "",
            ]
        )
    return buf.getvalue()


def render_experiment_table(result: ExperimentReport, opts: RenderOptions = RenderOptions()) -> str:
    """Side-by-side arms; lifts and p-values in parentheses after treatment cells."""
    if opts.format == "csv":
        return _experiment_csv(result, opts)
    d = opts.percent_digits
    header = [
        "Funnel Event",
        f"{result.focal_label} obs",
        f"{result.reference_label} obs",
        "Raw Ratio",
        f"{result.focal_label} obs",
        f"{result.reference_label} obs",
        "Raw Ratio",
    ]
    rows = [header]
    for control_layer, treatment_layer in zip(result.control.layers, result.treatment.layers):
        rows.append(
            [
                control_layer.layer,
                str(control_layer.focal_count),
                str(control_layer.reference_count),
                _pct(control_layer.raw_ratio, d),
                str(treatment_layer.focal_count),
                str(treatment_layer.reference_count),
                _pct(treatment_layer.raw_ratio, d),
            ]
        )
    multiple = len(result.transitions) > 1
    for t in result.transitions:
        suffix = f" ({t.from_layer} -> {t.to_layer})" if multiple else ""
        rows.append(
            [
                f"{t.to_layer} percentage{suffix}",
                _pct(t.focal.control_rate, d),
                _pct(t.reference.control_rate, d),
                _pct(t.control_survival, d),
                f"{_pct(t.focal.treatment_rate, d)} ({_pct(t.focal.lift, d)}, {_p_str(t.focal.p_value)})",
                f"{_pct(t.reference.treatment_rate, d)} ({_pct(t.reference.lift, d)}, {_p_str(t.reference.p_value)})",
                _pct(t.treatment_survival, d),
            ]
        )
        lift = t.adjusted_lift
        rows.append(
            [
                f"Adjusted Funnel Survival Ratio{suffix}",
                "",
                "",
                _pct(t.control_adjusted.point, d),
                "",
                "",
                f"**{_pct(t.treatment_adjusted.point, d)} ({_pct(lift.lift, d)}, {_p_str(lift.p_value)})**",
            ]
        )
    body = _layout(rows, left_columns={0})
    first_line = body.split("\n", 1)[0]
    arm_banner = _arm_banner(first_line, rows[0])
    return arm_banner + "\n" + body


def _arm_banner(first_line: str, header: list[str]) -> str:
    """Place 'Baseline Model' / 'Treatment Model' over their column blocks."""
    first_block_start = first_line.index(header[1])
    second_block_start = first_line.index(header[4], first_block_start + len(header[1]))
    banner = [" "] * len(first_line)
    for start, label in ((first_block_start, "Baseline Model"), (second_block_start, "Treatment Model")):
        banner[start : start + len(label)] = label
    return "".join(banner).rstrip()


def _experiment_csv(result: ExperimentReport, opts: RenderOptions) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["arm", "metric", "value", "lift", "p_value"])
    for arm, table in (("control", result.control), ("treatment", result.treatment)):
        treated = arm == "treatment"
        for layer in table.layers:
            writer.writerow([arm, f"count[{layer.layer}][{result.focal_label}]", layer.focal_count, "", ""])
            writer.writerow([arm, f"count[{layer.layer}][{result.reference_label}]", layer.reference_count, "", ""])
            writer.writerow([arm, f"raw_ratio[{layer.layer}]", repr(layer.raw_ratio), "", ""])
        for t in result.transitions:
            span = f"{t.from_layer}->{t.to_layer}"
            for side, label in ((t.focal, result.focal_label), (t.reference, result.reference_label)):
                rate = side.treatment_rate if treated else side.control_rate
                writer.writerow(
                    [
                        arm,
                        f"conversion_rate[{span}][{label}]",
                        repr(rate),
                        repr(side.lift) if treated else "",
                        _p_str(side.p_value) if treated else "",
                    ]
                )
            survival = t.treatment_survival if treated else t.control_survival
            writer.writerow([arm, f"survival_ratio[{span}]", repr(survival), "", ""])
            adjusted = t.treatment_adjusted if treated else t.control_adjusted
            writer.writerow(
                [
                    arm,
                    f"adjusted_survival_ratio[{span}]",
                    repr(adjusted.point),
                    repr(t.adjusted_lift.lift) if treated else "",
                    _p_str(t.adjusted_lift.p_value) if treated else "",
                ]
            )
    return buf.getvalue()
