"""Loaders for unit files, pre-aggregated counts, and the analysis config.

Units arrive as UTF-8 CSV with a header (comma delimiter, ``.`` decimal
point) or as line-delimited JSON records using the same field names. The
analysis configuration is TOML; its keys are stable API and documented in
the README. Loading is strict: `load_units` raises on the first bad row,
while `scan_units` collects every problem for validation reports.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError, IngestError
from .metrics import FunnelCounts
from .model import (
    AnalysisConfig,
    CovariateSpec,
    FunnelSpec,
    GroupLabel,
    UnitRecord,
    Violation,
)
from .status import ThresholdProfile, profile_from_name

_TRUE = {"1", "true"}
_FALSE = {"0", "false"}


@dataclass(frozen=True)
class ColumnMapping:
    """Where each model field lives in a tabular unit file."""

    unit_id_column: str
    group_column: str
    covariate_columns: tuple[str, ...]
    layer_columns: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "covariate_columns", tuple(self.covariate_columns))
        object.__setattr__(self, "layer_columns", tuple(self.layer_columns))
        names = [self.unit_id_column, self.group_column, *self.covariate_columns, *self.layer_columns]
        if len(set(names)) != len(names):
            raise ConfigError("column names must be distinct")

    @classmethod
    def from_config(cls, config: AnalysisConfig) -> "ColumnMapping":
        """Default columns: unit_id, group, covariate names, layer names."""
        return cls(
            "unit_id",
            "group",
            tuple(c.name for c in config.covariates),
            config.funnel.layers,
        )


def _parse_flag(token: str) -> bool | None:
    t = token.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    return None


def _coerce_json_flag(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    if isinstance(value, str):
        return _parse_flag(value)
    return None


def _open_text(source: IO[str] | str | Path) -> tuple[IO[str], bool]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    return source, False


def _looks_like_jsonl(source, first_line: str) -> bool:
    if isinstance(source, (str, Path)) and str(source).endswith((".jsonl", ".ndjson")):
        return True
    return first_line.lstrip()[:1] == "{"


def scan_units(
    source: IO[str] | str | Path,
    mapping: ColumnMapping,
    covariates: Sequence[CovariateSpec] | None = None,
    valid_groups: Iterable[str] | None = None,
) -> tuple[list[UnitRecord], list[Violation]]:
    """Parse every row, collecting violations instead of raising.

    Covariate values parse as floats for numeric specs and stay strings
    otherwise (when ``covariates`` is omitted everything stays a string).
    Rows with any violation are excluded from the returned units.
    """
    handle, own = _open_text(source)
    try:
        text = handle.read()
    finally:
        if own:
            handle.close()
    first_line = text.split("\n", 1)[0]
    if not text.strip():
        raise IngestError("empty input: missing header")
    groups = frozenset(valid_groups) if valid_groups is not None else None
    kinds = tuple(c.kind for c in covariates) if covariates is not None else None
    if kinds is not None and len(kinds) != len(mapping.covariate_columns):
        raise ConfigError(
            f"{len(kinds)} covariate specs for {len(mapping.covariate_columns)} covariate columns"
        )
    if _looks_like_jsonl(source, first_line):
        return _scan_jsonl(text, mapping, kinds, groups)
    return _scan_csv(text, mapping, kinds, groups)


def _build_unit(
    line: int,
    unit_id: str,
    group: str,
    raw_covariates: list,
    flags: list[bool | None],
    kinds: tuple[str, ...] | None,
    groups: frozenset[str] | None,
    mapping: ColumnMapping,
    seen: dict[str, int],
    violations: list[Violation],
) -> UnitRecord | None:
    bad = False
    if unit_id in seen:
        violations.append(
            Violation("duplicate_id", f"duplicate unit_id {unit_id!r} (first seen at line {seen[unit_id]})", unit_id, line)
        )
        bad = True
    else:
        seen[unit_id] = line
    if groups is not None and group not in groups:
        violations.append(Violation("unknown_group", f"unknown group label {group!r}", unit_id, line))
        bad = True
    values: list[str | float] = []
    for position, (col, value) in enumerate(zip(mapping.covariate_columns, raw_covariates)):
        if kinds is not None and kinds[position] == "numeric":
            try:
                values.append(float(value))
            except (TypeError, ValueError):
                violations.append(
                    Violation("bad_covariate", f"column {col!r}: {value!r} is not a number", unit_id, line)
                )
                bad = True
                values.append(0.0)
        else:
            values.append(str(value))
    parsed_flags: list[bool] = []
    for col, flag in zip(mapping.layer_columns, flags):
        if flag is None:
            violations.append(
                Violation("bad_flag", f"column {col!r}: expected one of 0/1/true/false", unit_id, line)
            )
            bad = True
            parsed_flags.append(False)
        else:
            parsed_flags.append(flag)
    unit = UnitRecord(unit_id, group, tuple(values), tuple(parsed_flags))
    if not bad and not unit.monotone:
        violations.append(
            Violation("non_monotone", "layer flags reach a layer without the one before it", unit_id, line)
        )
        bad = True
    return None if bad else unit


def _scan_csv(text, mapping, kinds, groups):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input: missing header") from None
    index: dict[str, int] = {}
    for i, name in enumerate(header):
        index.setdefault(name.strip(), i)
    needed = [mapping.unit_id_column, mapping.group_column, *mapping.covariate_columns, *mapping.layer_columns]
    for name in needed:
        if name not in index:
            raise IngestError(f"missing column {name!r}")
    width = len(header)
    units: list[UnitRecord] = []
    violations: list[Violation] = []
    seen: dict[str, int] = {}
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            violations.append(
                Violation("malformed_row", f"expected {width} fields, got {len(row)}", None, line)
            )
            continue
        unit = _build_unit(
            line,
            row[index[mapping.unit_id_column]],
            row[index[mapping.group_column]],
            [row[index[c]] for c in mapping.covariate_columns],
            [_parse_flag(row[index[c]]) for c in mapping.layer_columns],
            kinds,
            groups,
            mapping,
            seen,
            violations,
        )
        if unit is not None:
            units.append(unit)
    return units, violations


def _scan_jsonl(text, mapping, kinds, groups):
    units: list[UnitRecord] = []
    violations: list[Violation] = []
    seen: dict[str, int] = {}
    for line_no, raw in enumerate(text.split("\n"), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            violations.append(Violation("malformed_row", f"invalid JSON: {exc.msg}", None, line_no))
            continue
        if not isinstance(record, dict):
            violations.append(Violation("malformed_row", "record is not an object", None, line_no))
            continue
        needed = [mapping.unit_id_column, mapping.group_column, *mapping.covariate_columns, *mapping.layer_columns]
        missing = [name for name in needed if name not in record]
        if missing:
            violations.append(
                Violation("malformed_row", f"missing field {missing[0]!r}", None, line_no)
            )
            continue
        unit = _build_unit(
            line_no,
            str(record[mapping.unit_id_column]),
            str(record[mapping.group_column]),
            [record[c] for c in mapping.covariate_columns],
            [_coerce_json_flag(record[c]) for c in mapping.layer_columns],
            kinds,
            groups,
            mapping,
            seen,
            violations,
        )
        if unit is not None:
            units.append(unit)
    return units, violations


def load_units(
    source: IO[str] | str | Path,
    mapping: ColumnMapping,
    covariates: Sequence[CovariateSpec] | None = None,
    valid_groups: Iterable[str] | None = None,
) -> list[UnitRecord]:
    """Strict loading: raises on the first malformed or inconsistent row."""
    units, violations = scan_units(source, mapping, covariates, valid_groups)
    if violations:
        first = violations[0]
        more = f" (+{len(violations) - 1} more)" if len(violations) > 1 else ""
        raise IngestError(f"[{first.kind}] {first.message}{more}", line=first.line)
    return units


def load_counts(source: IO[str] | str | Path, funnel: FunnelSpec) -> FunnelCounts:
    """Pre-aggregated counts: CSV with columns layer, focal, reference.

    Serves the unadjusted metrics path only; covariate adjustment needs
    unit-level data. Rows may be in any order but must cover the funnel
    layers exactly.
    """
    handle, own = _open_text(source)
    try:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError("empty input: missing header") from None
        for name in ("layer", "focal", "reference"):
            if name not in header:
                raise IngestError(f"missing column {name!r}")
        idx = {name: header.index(name) for name in ("layer", "focal", "reference")}
        by_layer: dict[str, tuple[int, int]] = {}
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise IngestError(f"expected {len(header)} fields, got {len(row)}", line=line)
            layer = row[idx["layer"]].strip()
            if layer not in funnel.layers:
                raise IngestError(f"unknown layer {layer!r}", line=line)
            if layer in by_layer:
                raise IngestError(f"duplicate layer {layer!r}", line=line)
            try:
                focal = int(row[idx["focal"]])
                reference = int(row[idx["reference"]])
            except ValueError:
                raise IngestError("counts must be integers", line=line) from None
            by_layer[layer] = (focal, reference)
    finally:
        if own:
            handle.close()
    missing = [name for name in funnel.layers if name not in by_layer]
    if missing:
        raise IngestError(f"missing counts for layer {missing[0]!r}")
    try:
        return FunnelCounts(
            funnel.layers,
            tuple(by_layer[name][0] for name in funnel.layers),
            tuple(by_layer[name][1] for name in funnel.layers),
        )
    except ValueError as exc:
        raise IngestError(str(exc)) from None


def _read_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid config: {exc}") from None


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in [{where}]")


def _parse_covariate(entry: dict, index: int) -> CovariateSpec:
    where = f"covariates[{index}]"
    _check_keys(entry, {"name", "kind", "cut_points", "buckets"}, where)
    try:
        name = entry["name"]
        kind = entry["kind"]
    except KeyError as exc:
        raise ConfigError(f"{where} missing required key {exc.args[0]!r}") from None
    cut_points = entry.get("cut_points", ())
    if any(b >= a for b, a in zip(cut_points, cut_points[1:])):
        raise ConfigError(f"{where}.cut_points not increasing")
    buckets = entry.get("buckets")
    if buckets is not None:
        buckets = {str(k): str(v) for k, v in buckets.items()}
    return CovariateSpec(str(name), str(kind), tuple(float(c) for c in cut_points), buckets)


def _parse_profile(section: dict) -> ThresholdProfile:
    _check_keys(section, {"profile", "green_below", "red_above"}, "thresholds")
    name = section.get("profile", "middle")
    if name == "custom" and "green_below" in section:
        if "red_above" not in section:
            raise ConfigError("thresholds.red_above is required for a custom profile")
        return ThresholdProfile("custom", float(section["green_below"]), float(section["red_above"]))
    return profile_from_name(str(name))


def load_config(path: str | Path) -> AnalysisConfig:
    """Parse and validate the analysis configuration (TOML; see README)."""
    data = _read_toml(path)
    _check_keys(data, {"funnel", "groups", "covariates", "thresholds", "analysis", "columns"}, "top level")
    try:
        funnel_section = data["funnel"]
        groups_section = data["groups"]
    except KeyError as exc:
        raise ConfigError(f"missing required section [{exc.args[0]}]") from None
    _check_keys(funnel_section, {"layers"}, "funnel")
    _check_keys(groups_section, {"focal", "reference"}, "groups")
    if "layers" not in funnel_section:
        raise ConfigError("missing required key 'funnel.layers'")
    for key in ("focal", "reference"):
        if key not in groups_section:
            raise ConfigError(f"missing required key 'groups.{key}'")
    covariates = tuple(
        _parse_covariate(entry, i) for i, entry in enumerate(data.get("covariates", ()))
    )
    analysis = data.get("analysis", {})
    _check_keys(analysis, {"confidence_level"}, "analysis")
    level = float(analysis.get("confidence_level", 0.95))
    return AnalysisConfig(
        funnel=FunnelSpec(tuple(str(v) for v in funnel_section["layers"])),
        focal_group=GroupLabel.focal(str(groups_section["focal"])),
        reference_group=GroupLabel.reference(str(groups_section["reference"])),
        covariates=covariates,
        color_profile=_parse_profile(data.get("thresholds", {})),
        confidence_level=level,
    )


def load_column_mapping(path: str | Path, config: AnalysisConfig) -> ColumnMapping:
    """The [columns] section of the config file, with model-driven defaults."""
    section = _read_toml(path).get("columns", {})
    _check_keys(section, {"unit_id", "group", "covariates", "layers"}, "columns")
    default = ColumnMapping.from_config(config)
    covariate_columns = tuple(section.get("covariates", default.covariate_columns))
    layer_columns = tuple(section.get("layers", default.layer_columns))
    if len(covariate_columns) != len(config.covariates):
        raise ConfigError("columns.covariates must name one column per covariate")
    if len(layer_columns) != config.funnel.n_layers:
        raise ConfigError("columns.layers must name one column per funnel layer")
    return ColumnMapping(
        str(section.get("unit_id", default.unit_id_column)),
        str(section.get("group", default.group_column)),
        covariate_columns,
        layer_columns,
    )
