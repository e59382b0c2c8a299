"""Cohort file ingest and preprocessing into sparse patient records.

Input files are UTF-8 delimited text with one header row.  Cells that are
empty or hold a sentinel token ("NA" by default) become absent values; the
models downstream are built to tolerate that, so ingest never invents data.
Rows with paired baseline/discharge columns split into two records each.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .features import CATEGORICAL, CONTINUOUS, FeatureSet

OUTCOME_NAMES = ("DeLvTx", "Rehospitalization")

BASELINE = "baseline"
DISCHARGE = "discharge"

_TRUE_TOKENS = {"1", "1.0", "true", "yes", "y"}
_FALSE_TOKENS = {"0", "0.0", "false", "no", "n"}


class CohortError(Exception):
    """Base error for cohort ingest problems."""


class UnknownColumn(CohortError):
    pass


class MalformedNumber(CohortError):
    pass


class DuplicateRecordId(CohortError):
    pass


@dataclass(frozen=True)
class PatientRecord:
    record_id: str
    cohort_id: str
    timepoint: str
    values: dict[str, float]
    outcomes: dict[str, bool | None]

    def value(self, feature: str) -> float | None:
        return self.values.get(feature)


@dataclass
class Cohort:
    cohort_id: str
    records: list[PatientRecord]
    feature_set: FeatureSet

    @property
    def missing_fraction(self) -> float:
        """Absent feature slots over records x features."""
        if not self.records:
            return 0.0
        total = len(self.records) * len(self.feature_set)
        present = sum(
            1 for r in self.records for name in self.feature_set.names() if name in r.values
        )
        return (total - present) / total

    def to_csv(self) -> str:
        """Deterministic serialization: manifest column order, repr floats."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = self.feature_set.names()
        writer.writerow(["record_id", "timepoint", *names, *OUTCOME_NAMES])
        for rec in self.records:
            row = [rec.record_id, rec.timepoint]
            for name in names:
                v = rec.values.get(name)
                row.append("" if v is None else _format_number(v))
            for outcome in OUTCOME_NAMES:
                o = rec.outcomes.get(outcome)
                row.append("" if o is None else ("1" if o else "0"))
            writer.writerow(row)
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _format_number(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


@dataclass
class SchemaOptions:
    delimiter: str = ","
    sentinels: tuple[str, ...] = ("", "NA")
    id_column: str = "record_id"
    timepoint_column: str = "timepoint"
    baseline_suffix: str | None = None
    discharge_suffix: str | None = None
    outcome_columns: tuple[str, ...] = OUTCOME_NAMES

    @property
    def split_mode(self) -> bool:
        return self.baseline_suffix is not None or self.discharge_suffix is not None


@dataclass
class IngestReport:
    cohort_id: str
    rows_in: int = 0
    records_out: int = 0
    baseline_records: int = 0
    discharge_records: int = 0
    skipped_timepoints: int = 0
    sentinel_cells: list[tuple[str, str, str]] = field(default_factory=list)
    removed_outliers: list[tuple[str, str, float]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"cohort: {self.cohort_id}",
            f"rows in: {self.rows_in}",
            f"records out: {self.records_out}"
            f" (baseline {self.baseline_records}, discharge {self.discharge_records})",
            f"timepoints skipped (all values absent): {self.skipped_timepoints}",
            f"sentinel cells treated as absent: {len(self.sentinel_cells)}",
        ]
        for rec_id, feature, token in self.sentinel_cells:
            lines.append(f"  absent {rec_id} {feature} ({token!r})")
        lines.append(f"outlier values removed: {len(self.removed_outliers)}")
        for rec_id, feature, value in self.removed_outliers:
            lines.append(f"  removed {rec_id} {feature} = {_format_number(value)}")
        return "\n".join(lines) + "\n"


def _parse_outcome(token: str, options: SchemaOptions) -> bool | None:
    if token.strip() in options.sentinels:
        return None
    low = token.strip().lower()
    if low in _TRUE_TOKENS:
        return True
    if low in _FALSE_TOKENS:
        return False
    raise MalformedNumber(f"outcome value {token!r} is not boolean")


def _classify_columns(header: list[str], feature_set: FeatureSet, options: SchemaOptions):
    """Map each header column to (role, feature-or-outcome name, timepoint)."""
    by_lower = {spec.name.lower(): spec.name for spec in feature_set.features}
    outcome_by_lower = {name.lower(): name for name in options.outcome_columns}
    plan = []
    for col in header:
        stripped = col.strip()
        low = stripped.lower()
        if low == options.id_column.lower():
            plan.append(("id", None, None))
            continue
        if low == options.timepoint_column.lower():
            plan.append(("timepoint", None, None))
            continue
        if low in outcome_by_lower:
            plan.append(("outcome", outcome_by_lower[low], None))
            continue
        timepoint = None
        base = stripped
        if options.baseline_suffix and low.endswith(options.baseline_suffix.lower()):
            base, timepoint = stripped[: -len(options.baseline_suffix)], BASELINE
        elif options.discharge_suffix and low.endswith(options.discharge_suffix.lower()):
            base, timepoint = stripped[: -len(options.discharge_suffix)], DISCHARGE
        name = by_lower.get(base.lower())
        if name is None:
            raise UnknownColumn(f"column {col!r} not in feature set {feature_set.name!r}")
        plan.append(("feature", name, timepoint))
    return plan


def _parse_cell(token: str, name: str, spec_kind: str, rec_id: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedNumber(f"{rec_id}: {name} value {token!r} is not numeric") from None
    if math.isnan(value):
        raise MalformedNumber(f"{rec_id}: {name} value {token!r} is not numeric")
    if spec_kind == CATEGORICAL and value != int(value):
        raise MalformedNumber(f"{rec_id}: {name} code {token!r} is not an integer")
    return value


def split_timepoints(
    rows: list[dict[str, str]],
    feature_set: FeatureSet,
    options: SchemaOptions,
    report: IngestReport | None = None,
    cohort_id: str = "",
) -> list[PatientRecord]:
    """Turn raw header->token rows into records, one per non-empty timepoint.

    In split mode a row yields up to two records; outcomes and unsuffixed
    feature columns are copied to both.  A timepoint with every suffixed value
    absent yields no record (counted in the report, never an error).
    """
    header = list(rows[0].keys()) if rows else []
    plan = _classify_columns(header, feature_set, options)
    report = report if report is not None else IngestReport(cohort_id=cohort_id)
    seen_ids: set[str] = set()
    records: list[PatientRecord] = []

    for row_idx, row in enumerate(rows):
        report.rows_in += 1
        rec_id = None
        outcomes: dict[str, bool | None] = {name: None for name in options.outcome_columns}
        shared: dict[str, float] = {}
        per_tp: dict[str, dict[str, float]] = {BASELINE: {}, DISCHARGE: {}}
        tp_token = BASELINE
        for (role, name, timepoint), col in zip(plan, header):
            token = row[col]
            if role == "id":
                rec_id = token.strip()
                continue
            if role == "timepoint":
                tp_token = token.strip().lower() or BASELINE
                continue
            if role == "outcome":
                outcomes[name] = _parse_outcome(token, options)
                continue
            if token.strip() in options.sentinels:
                report.sentinel_cells.append((rec_id or f"row{row_idx + 1}", name, token))
                continue
            value = _parse_cell(token, name, feature_set.spec(name).kind, rec_id or f"row{row_idx + 1}")
            if timepoint is None:
                shared[name] = value
            else:
                per_tp[timepoint][name] = value
        if rec_id is None or rec_id == "":
            rec_id = f"row{row_idx + 1}"
        if rec_id in seen_ids:
            raise DuplicateRecordId(f"record id {rec_id!r} appears more than once")
        seen_ids.add(rec_id)

        if options.split_mode:
            for timepoint in (BASELINE, DISCHARGE):
                tp_values = per_tp[timepoint]
                if not tp_values:
                    report.skipped_timepoints += 1
                    continue
                records.append(
                    PatientRecord(
                        record_id=f"{rec_id}:{timepoint}",
                        cohort_id=cohort_id,
                        timepoint=timepoint,
                        values={**shared, **tp_values},
                        outcomes=dict(outcomes),
                    )
                )
                if timepoint == BASELINE:
                    report.baseline_records += 1
                else:
                    report.discharge_records += 1
        else:
            if tp_token not in (BASELINE, DISCHARGE):
                tp_token = BASELINE
            records.append(
                PatientRecord(
                    record_id=rec_id,
                    cohort_id=cohort_id,
                    timepoint=tp_token,
                    values=shared,
                    outcomes=dict(outcomes),
                )
            )
            if tp_token == BASELINE:
                report.baseline_records += 1
            else:
                report.discharge_records += 1
    report.records_out = len(records)
    return records


def load_cohort_with_report(
    path: str | Path,
    feature_set: FeatureSet,
    options: SchemaOptions | None = None,
    cohort_id: str | None = None,
) -> tuple[Cohort, IngestReport]:
    path = Path(path)
    options = options or SchemaOptions()
    cohort_id = cohort_id if cohort_id is not None else path.stem
    report = IngestReport(cohort_id=cohort_id)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=options.delimiter)
        rows = list(reader)
        if reader.fieldnames is None:
            raise CohortError(f"{path}: empty file")
    records = split_timepoints(rows, feature_set, options, report, cohort_id)
    return Cohort(cohort_id=cohort_id, records=records, feature_set=feature_set), report


def load_cohort(
    path: str | Path,
    feature_set: FeatureSet,
    options: SchemaOptions | None = None,
    cohort_id: str | None = None,
) -> Cohort:
    cohort, _ = load_cohort_with_report(path, feature_set, options, cohort_id)
    return cohort


# Derived noninvasive hemodynamics.  Formulas are the textbook definitions:
# pulse pressure, mean arterial pressure, cardiac power index (451 converts
# mmHg.L/min to watts), pulmonary artery pulsatility index.


def _derive_pp(v):
    return v["BPSYS"] - v["BPDIAS"]


def _derive_map(v):
    return (v["BPSYS"] + 2.0 * v["BPDIAS"]) / 3.0


def _derive_cpi(v):
    return v["MAP"] * v["CO"] / v["BSA"] / 451.0


def _derive_papi(v):
    if v["RAP"] <= 0:
        return None
    return (v["PAS"] - v["PAD"]) / v["RAP"]


DERIVATIONS = (
    ("PP", ("BPSYS", "BPDIAS"), _derive_pp),
    ("MAP", ("BPSYS", "BPDIAS"), _derive_map),
    ("CPI", ("MAP", "CO", "BSA"), _derive_cpi),
    ("PAPI", ("PAS", "PAD", "RAP"), _derive_papi),
)


def derive_noninvasive_hemodynamics(record: PatientRecord) -> PatientRecord:
    """Add derived metrics where every input is present.

    Explicitly provided values are never overwritten and underivable metrics
    stay absent, which makes the operation idempotent.
    """
    values = dict(record.values)
    for name, inputs, fn in DERIVATIONS:
        if name in values:
            continue
        if any(inp not in values for inp in inputs):
            continue
        result = fn(values)
        if result is not None:
            values[name] = result
    if values == record.values:
        return record
    return replace(record, values=values)


RANGE_RULE = "range"
ZSCORE_RULE = "zscore"


def remove_outliers(
    cohort: Cohort,
    rule: str = RANGE_RULE,
    z_threshold: float = 4.0,
    report: IngestReport | None = None,
) -> tuple[Cohort, list[tuple[str, str, float]]]:
    """Blank offending values; records are never dropped.

    ``range``: values outside the feature's declared valid range (or codes not
    declared for a categorical) become absent.  ``zscore``: a value is removed
    when it sits more than ``z_threshold`` deviations from the mean of the
    *other* present values of that feature; excluding the candidate keeps one
    extreme point from inflating the deviation it is judged against.
    """
    if rule not in (RANGE_RULE, ZSCORE_RULE):
        raise CohortError(f"unknown outlier rule {rule!r}")
    removals: list[tuple[str, str, float]] = []
    removed_cells: set[tuple[int, str]] = set()

    if rule == RANGE_RULE:
        for idx, rec in enumerate(cohort.records):
            for name, value in rec.values.items():
                spec = cohort.feature_set.get(name)
                if spec is not None and not spec.in_range(value):
                    removals.append((rec.record_id, name, value))
                    removed_cells.add((idx, name))
    else:
        for name in cohort.feature_set.names():
            present = [
                (idx, rec.values[name])
                for idx, rec in enumerate(cohort.records)
                if name in rec.values
            ]
            if len(present) < 2:
                continue
            total = sum(v for _, v in present)
            total_sq = sum(v * v for _, v in present)
            n = len(present)
            for idx, value in present:
                mean_others = (total - value) / (n - 1)
                var_others = max(total_sq - value * value, 0.0) / (n - 1) - mean_others**2
                std_others = math.sqrt(max(var_others, 0.0))
                if std_others == 0.0:
                    is_outlier = value != mean_others
                else:
                    is_outlier = abs(value - mean_others) / std_others > z_threshold
                if is_outlier:
                    removals.append((cohort.records[idx].record_id, name, value))
                    removed_cells.add((idx, name))

    if not removals:
        return cohort, []
    new_records = []
    for idx, rec in enumerate(cohort.records):
        doomed = {name for i, name in removed_cells if i == idx}
        if doomed:
            rec = replace(rec, values={k: v for k, v in rec.values.items() if k not in doomed})
        new_records.append(rec)
    if report is not None:
        report.removed_outliers.extend(removals)
    return Cohort(cohort.cohort_id, new_records, cohort.feature_set), removals


def project(record: PatientRecord, feature_set: FeatureSet) -> PatientRecord:
    """Restrict a record's values to a feature set; outcomes are retained."""
    values = {k: v for k, v in record.values.items() if k in feature_set}
    return replace(record, values=values)
