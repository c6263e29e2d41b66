"""Schema-validated loading of MIMIC-IV-shaped delimited tables.

Each table is read with the stdlib ``csv`` module, mapped onto an immutable
row type, and checked against that type's invariants. Rows that fail are
quarantined in a :class:`ParseReport` instead of aborting the load.
"""
from __future__ import annotations

import csv
import gzip
import io
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

from .errors import DataError, SchemaError
from .timeutil import parse_timestamp

log = logging.getLogger(__name__)

MAX_QUARANTINE_EXAMPLES = 100


@dataclass(frozen=True, slots=True)
class PatientRow:
    subject_id: int
    gender: str
    anchor_age: int
    anchor_year: int
    date_of_death: Optional[int] = None


@dataclass(frozen=True, slots=True)
class AdmissionRow:
    hadm_id: int
    subject_id: int
    admit_time: int
    discharge_time: int
    death_time: Optional[int]
    hospital_expire_flag: bool
    insurance: str
    ethnicity: str


@dataclass(frozen=True, slots=True)
class DiagnosisRow:
    hadm_id: int
    icd_code: str
    icd_version: int


@dataclass(frozen=True, slots=True)
class MeasurementRow:
    """A lab (keyed by ``hadm_id``) or chart event (keyed by ``stay_id``)."""

    hadm_id: Optional[int]
    stay_id: Optional[int]
    item_id: int
    chart_time: int
    value: Optional[float]
    unit: Optional[str]


@dataclass(frozen=True, slots=True)
class MedicationRow:
    hadm_id: Optional[int]
    stay_id: Optional[int]
    drug_name: str
    ndc: Optional[str]
    start_time: int
    stop_time: int
    dose: Optional[float]
    dose_unit: Optional[str]


@dataclass(frozen=True, slots=True)
class ProcedureRow:
    hadm_id: Optional[int]
    stay_id: Optional[int]
    code: str
    event_time: int


@dataclass(frozen=True, slots=True)
class IcuStayRow:
    stay_id: int
    hadm_id: int
    in_time: int
    out_time: int


class RowError(ValueError):
    """A single row violates its schema; the row is quarantined."""


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise RowError(f"non-finite number {text!r}")
    return value


def _str(text: str) -> str:
    return text


def _nonempty(text: str) -> str:
    if not text.strip():
        raise RowError("empty code")
    return text.strip()


def _bool(text: str) -> bool:
    if text in ("1", "true", "True", "t"):
        return True
    if text in ("0", "false", "False", "f"):
        return False
    raise RowError(f"not a boolean: {text!r}")


def _gender(text: str) -> str:
    if text not in ("F", "M"):
        raise RowError(f"gender must be F or M, got {text!r}")
    return text


def _icd_version(text: str) -> int:
    version = int(text)
    if version not in (9, 10):
        raise RowError(f"icd_version must be 9 or 10, got {version}")
    return version


def _anchor_age(text: str) -> int:
    age = int(text)
    if age < 0:
        raise RowError("anchor_age < 0")
    return age


def _anchor_year(text: str) -> int:
    year = int(text)
    if not 1900 <= year <= 2300:
        raise RowError(f"anchor_year {year} outside [1900, 2300]")
    return year


@dataclass(frozen=True)
class Column:
    source: str
    target: str
    parse: Callable[[str], object]
    optional: bool = False


@dataclass(frozen=True)
class TableSchema:
    name: str
    row_type: type
    columns: tuple[Column, ...]
    constants: tuple[tuple[str, object], ...] = ()
    unique: Optional[str] = None


def _c(source, target=None, parse=_str, optional=False):
    return Column(source, target or source, parse, optional)


SCHEMAS: dict[str, TableSchema] = {
    s.name: s
    for s in [
        TableSchema("patients", PatientRow, (
            _c("subject_id", parse=_int),
            _c("gender", parse=_gender),
            _c("anchor_age", parse=_anchor_age),
            _c("anchor_year", parse=_anchor_year),
            _c("dod", "date_of_death", parse_timestamp, optional=True),
        ), unique="subject_id"),
        TableSchema("admissions", AdmissionRow, (
            _c("hadm_id", parse=_int),
            _c("subject_id", parse=_int),
            _c("admittime", "admit_time", parse_timestamp),
            _c("dischtime", "discharge_time", parse_timestamp),
            _c("deathtime", "death_time", parse_timestamp, optional=True),
            _c("hospital_expire_flag", parse=_bool),
            _c("insurance"),
            _c("ethnicity"),
        ), unique="hadm_id"),
        TableSchema("diagnoses_icd", DiagnosisRow, (
            _c("hadm_id", parse=_int),
            _c("icd_code", parse=_nonempty),
            _c("icd_version", parse=_icd_version),
        )),
        TableSchema("labevents", MeasurementRow, (
            _c("hadm_id", parse=_int),
            _c("itemid", "item_id", _int),
            _c("charttime", "chart_time", parse_timestamp),
            _c("valuenum", "value", _float, optional=True),
            _c("valueuom", "unit", optional=True),
        ), constants=(("stay_id", None),)),
        TableSchema("chartevents", MeasurementRow, (
            _c("stay_id", parse=_int),
            _c("itemid", "item_id", _int),
            _c("charttime", "chart_time", parse_timestamp),
            _c("valuenum", "value", _float, optional=True),
            _c("valueuom", "unit", optional=True),
        ), constants=(("hadm_id", None),)),
        TableSchema("prescriptions", MedicationRow, (
            _c("hadm_id", parse=_int),
            _c("drug", "drug_name"),
            _c("ndc", optional=True),
            _c("starttime", "start_time", parse_timestamp),
            _c("stoptime", "stop_time", parse_timestamp),
            _c("dose_val_rx", "dose", _float, optional=True),
            _c("dose_unit_rx", "dose_unit", optional=True),
        ), constants=(("stay_id", None),)),
        TableSchema("inputevents", MedicationRow, (
            _c("stay_id", parse=_int),
            _c("itemid", "drug_name"),
            _c("starttime", "start_time", parse_timestamp),
            _c("endtime", "stop_time", parse_timestamp),
            _c("amount", "dose", _float, optional=True),
            _c("amountuom", "dose_unit", optional=True),
        ), constants=(("hadm_id", None), ("ndc", None))),
        TableSchema("procedures_icd", ProcedureRow, (
            _c("hadm_id", parse=_int),
            _c("icd_code", "code", _nonempty),
            _c("chartdate", "event_time", parse_timestamp),
        ), constants=(("stay_id", None),)),
        TableSchema("procedureevents", ProcedureRow, (
            _c("stay_id", parse=_int),
            _c("itemid", "code", _nonempty),
            _c("starttime", "event_time", parse_timestamp),
        ), constants=(("hadm_id", None),)),
        TableSchema("icustays", IcuStayRow, (
            _c("stay_id", parse=_int),
            _c("hadm_id", parse=_int),
            _c("intime", "in_time", parse_timestamp),
            _c("outtime", "out_time", parse_timestamp),
        ), unique="stay_id"),
    ]
}

REQUIRED_TABLES = ("patients", "admissions")


@dataclass
class ParseReport:
    table: str
    data_lines: int = 0
    rows: int = 0
    quarantined: int = 0
    reasons: Counter = field(default_factory=Counter)
    examples: list = field(default_factory=list)

    def quarantine(self, line_no: int, reason: str, raw) -> None:
        self.quarantined += 1
        self.reasons[reason.split(":")[0]] += 1
        if len(self.examples) < MAX_QUARANTINE_EXAMPLES:
            self.examples.append((line_no, reason, raw))


@dataclass
class LoadedTable:
    schema: TableSchema
    rows: list
    report: ParseReport


def _open_text(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def iter_table(path, schema: TableSchema, report: ParseReport) -> Iterator:
    """Yield typed rows from ``path`` in file order, quarantining bad rows into ``report``."""
    path = Path(path)
    with _open_text(path) as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row expected") from None
        index = {name.strip(): i for i, name in enumerate(header)}
        for col in schema.columns:
            if col.source not in index:
                raise SchemaError(f"{col.source} absent")
        plan = [(index[c.source], c.target, c.parse, c.optional) for c in schema.columns]
        width = len(header)
        constants = dict(schema.constants)
        seen = set() if schema.unique else None
        row_type = schema.row_type
        for line_no, record in enumerate(reader, start=2):
            report.data_lines += 1
            if len(record) != width:
                report.quarantine(line_no, f"field_count: expected {width}, got {len(record)}", record)
                continue
            values = dict(constants)
            try:
                for i, target, parse, optional in plan:
                    text = record[i]
                    if text == "":
                        if not optional:
                            raise RowError(f"missing value for {target}")
                        values[target] = None
                    else:
                        values[target] = parse(text)
            except (ValueError, TypeError) as exc:
                report.quarantine(line_no, f"parse: {exc}", record)
                continue
            if seen is not None:
                key = values[schema.unique]
                if key in seen:
                    report.quarantine(line_no, f"duplicate_key: {schema.unique}={key}", record)
                    continue
                seen.add(key)
            report.rows += 1
            yield row_type(**values)


def load_table(path, schema: TableSchema | str) -> LoadedTable:
    if isinstance(schema, str):
        schema = SCHEMAS[schema]
    report = ParseReport(schema.name)
    rows = list(iter_table(path, schema, report))
    if report.quarantined:
        log.warning("%s: quarantined %d of %d rows", schema.name, report.quarantined, report.data_lines)
    return LoadedTable(schema, rows, report)


def locate_table(input_dir, name: str) -> Optional[Path]:
    base = Path(input_dir)
    for candidate in (base / f"{name}.csv", base / f"{name}.csv.gz"):
        if candidate.exists():
            return candidate
    return None


@dataclass
class Tables:
    patients: list = field(default_factory=list)
    admissions: list = field(default_factory=list)
    diagnoses_icd: list = field(default_factory=list)
    labevents: list = field(default_factory=list)
    chartevents: list = field(default_factory=list)
    prescriptions: list = field(default_factory=list)
    inputevents: list = field(default_factory=list)
    procedures_icd: list = field(default_factory=list)
    procedureevents: list = field(default_factory=list)
    icustays: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)


def load_tables(input_dir, threads: int = 1) -> Tables:
    """Load every known table present in ``input_dir``; patients and admissions are mandatory."""
    paths = {}
    for name in SCHEMAS:
        path = locate_table(input_dir, name)
        if path is None:
            if name in REQUIRED_TABLES:
                raise DataError(f"required table {name!r} not found in {input_dir}")
            continue
        paths[name] = path
    tables = Tables()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        loaded = dict(zip(paths, pool.map(lambda n: load_table(paths[n], n), paths)))
    for name, table in loaded.items():
        setattr(tables, name, table.rows)
        tables.reports[name] = table.report
    return tables


@dataclass
class IntegrityReport:
    violations: Counter = field(default_factory=Counter)
    by_table: Counter = field(default_factory=Counter)
    examples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, category: str, table: str, key) -> None:
        self.violations[category] += 1
        self.by_table[table] += 1
        if len(self.examples) < MAX_QUARANTINE_EXAMPLES:
            self.examples.append((category, table, key))


def check_referential_integrity(tables: Tables) -> IntegrityReport:
    """List foreign-key violations across the loaded tables without modifying them."""
    report = IntegrityReport()
    subjects = {p.subject_id for p in tables.patients}
    hadms = {a.hadm_id for a in tables.admissions}
    for adm in tables.admissions:
        if adm.subject_id not in subjects:
            report.add("admission_without_patient", "admissions", adm.hadm_id)
    for stay in tables.icustays:
        if stay.hadm_id not in hadms:
            report.add("stay_without_admission", "icustays", stay.stay_id)
    stays = {s.stay_id for s in tables.icustays}
    for dx in tables.diagnoses_icd:
        if dx.hadm_id not in hadms:
            report.add("orphan_diagnosis", "diagnoses_icd", dx.hadm_id)
    for name in ("labevents", "chartevents", "prescriptions", "inputevents",
                 "procedures_icd", "procedureevents"):
        for row in getattr(tables, name):
            if row.hadm_id is not None:
                if row.hadm_id not in hadms:
                    report.add("orphan_event", name, row.hadm_id)
            elif row.stay_id not in stays:
                report.add("orphan_event", name, row.stay_id)
    return report
