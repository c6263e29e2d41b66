"""Task definitions, labeling and cohort extraction."""
from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import ConfigError, DataError
from .grouping import IcdMapTable, diagnosis_roots
from .timeutil import DAY, HOUR, format_timestamp, year_of

log = logging.getLogger(__name__)

GAP_DAYS_RANGE = (10, 150)
LOS_DAYS_RANGE = (1, 10)
ADULT_AGE = 18
TARGET_ROOTS = ("I50", "N18", "J44", "I25")


class Task(str, Enum):
    READMISSION = "Readmission"
    MORTALITY = "Mortality"
    LENGTH_OF_STAY = "LengthOfStay"
    PHENOTYPE = "Phenotype"


class Setting(str, Enum):
    ICU = "ICU"
    NON_ICU = "NonICU"


class Anchor(str, Enum):
    FIRST_HOURS = "FirstHours"
    LAST_HOURS = "LastHours"


ANCHOR_FOR_TASK = {
    Task.MORTALITY: Anchor.FIRST_HOURS,
    Task.LENGTH_OF_STAY: Anchor.FIRST_HOURS,
    Task.READMISSION: Anchor.LAST_HOURS,
    Task.PHENOTYPE: Anchor.LAST_HOURS,
}


def _check_root(value, name):
    if value is None:
        return None
    value = str(value).strip().upper()
    if len(value) != 3 or not value[0].isalpha() or not value[1:].isalnum():
        raise ConfigError(f"{name} must be a 3-character ICD-10 root, got {value!r}")
    return value


@dataclass(frozen=True)
class TaskSpec:
    task: Task
    setting: Setting
    window_hours: int
    disease_filter: Optional[str] = None
    gap_days: int = 30
    los_threshold_days: int = 3
    phenotype_target: Optional[str] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "task", Task(self.task))
            object.__setattr__(self, "setting", Setting(self.setting))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if int(self.window_hours) != self.window_hours or self.window_hours <= 0:
            raise ConfigError(f"window_hours must be a positive integer, got {self.window_hours}")
        lo, hi = GAP_DAYS_RANGE
        if not lo <= self.gap_days <= hi:
            raise ConfigError(f"gap_days must be between {lo} and {hi} days, got {self.gap_days}")
        lo, hi = LOS_DAYS_RANGE
        if not lo <= self.los_threshold_days <= hi:
            raise ConfigError(
                f"los_threshold_days must be between {lo} and {hi} days, got {self.los_threshold_days}")
        object.__setattr__(self, "disease_filter", _check_root(self.disease_filter, "disease_filter"))
        object.__setattr__(self, "phenotype_target", _check_root(self.phenotype_target, "phenotype_target"))
        if self.task is Task.PHENOTYPE and self.phenotype_target is None:
            raise ConfigError("phenotype task requires phenotype_target")

    @property
    def anchor(self) -> Anchor:
        return ANCHOR_FOR_TASK[self.task]


@dataclass(frozen=True)
class CohortSample:
    sample_id: int
    subject_id: int
    hadm_id: int
    stay_id: Optional[int]
    label: int
    window_start: int
    window_end: int
    age: int
    gender: str
    ethnicity: str
    insurance: str


@dataclass
class CohortReport:
    n_input: int = 0
    n_samples: int = 0
    n_positive: int = 0
    excluded: Counter = field(default_factory=Counter)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_samples": self.n_samples,
            "n_positive": self.n_positive,
            "excluded": dict(sorted(self.excluded.items())),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [
            f"input units:     {self.n_input}",
            f"cohort samples:  {self.n_samples}",
            f"positive labels: {self.n_positive}",
            "exclusions:",
        ]
        lines += [f"  {reason}: {count}" for reason, count in sorted(self.excluded.items())]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) + "\n"


class Excluded(Exception):
    """Raised by a labeler when a sample cannot be labeled; carries a reason code."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def compute_age(anchor_age: int, anchor_year: int, admit_time: int) -> int:
    """Age at admission: admission year minus the year of birth (anchor_year - anchor_age)."""
    age = year_of(admit_time) - (anchor_year - anchor_age)
    if age < 0:
        raise DataError(f"admission precedes birth year (age {age})")
    return age


def filter_disease(admissions, dx_roots: dict, root: str) -> list:
    return [a for a in admissions if root in dx_roots.get(a.hadm_id, ())]


def label_readmission(admissions, gap_days: int) -> tuple[dict, dict]:
    """Label each admission of one patient (sorted by admit time).

    Returns ``(labels, excluded)`` keyed by hadm_id. The boundary is inclusive:
    a readmission exactly ``gap_days`` after discharge counts.
    """
    labels, excluded = {}, {}
    limit = gap_days * DAY
    for cur, nxt in zip(admissions, list(admissions[1:]) + [None]):
        if nxt is None:
            labels[cur.hadm_id] = 0
            continue
        gap = nxt.admit_time - cur.discharge_time
        if gap < 0:
            excluded[cur.hadm_id] = "overlapping_admissions"
        else:
            labels[cur.hadm_id] = int(gap <= limit)
    return labels, excluded


def label_mortality(admission, window_hours: int, bounds: Optional[tuple[int, int]] = None) -> int:
    start, end = bounds or (admission.admit_time, admission.discharge_time)
    death = admission.death_time
    if death is not None and death < admission.admit_time:
        raise Excluded("death_before_admission")
    if end - start < window_hours * HOUR:
        raise Excluded("stay_shorter_than_window")
    died = death is not None and admission.admit_time <= death <= admission.discharge_time
    return int(admission.hospital_expire_flag or died)


def label_los(admission, los_threshold_days: int, bounds: Optional[tuple[int, int]] = None) -> int:
    start, end = bounds or (admission.admit_time, admission.discharge_time)
    return int(end - start > los_threshold_days * DAY)


def label_phenotype(admissions, dx_roots: dict, target_root: str) -> tuple[dict, dict]:
    """Label = next admission carries ``target_root``; a patient's last admission is excluded."""
    labels, excluded = {}, {}
    for cur, nxt in zip(admissions, list(admissions[1:]) + [None]):
        if nxt is None:
            excluded[cur.hadm_id] = "no_next_admission"
        else:
            labels[cur.hadm_id] = int(target_root in dx_roots.get(nxt.hadm_id, ()))
    return labels, excluded


def observation_window(task: TaskSpec, start: int, end: int) -> tuple[int, int]:
    span = task.window_hours * HOUR
    if task.anchor is Anchor.FIRST_HOURS:
        return start, start + span
    return end - span, end


def extract_cohort(tables, task: TaskSpec, icd_map: Optional[IcdMapTable] = None,
                   dx_roots: Optional[dict] = None) -> tuple[list[CohortSample], CohortReport]:
    """Build the labeled cohort for ``task`` and tally every exclusion by reason.

    Non-ICU samples are hospital admissions; ICU samples are ICU stays. Every
    input unit ends up either in the cohort or in exactly one exclusion bucket.
    """
    if dx_roots is None:
        dx_roots = diagnosis_roots(tables.diagnoses_icd, icd_map or IcdMapTable.load())
    report = CohortReport()
    patients = {p.subject_id: p for p in tables.patients}
    admissions = {a.hadm_id: a for a in tables.admissions}

    by_patient = defaultdict(list)
    for adm in admissions.values():
        if adm.admit_time <= adm.discharge_time:
            by_patient[adm.subject_id].append(adm)
    hadm_labels, hadm_excluded = {}, {}
    for adms in by_patient.values():
        adms.sort(key=lambda a: (a.admit_time, a.hadm_id))
        if task.task is Task.READMISSION:
            labels, excluded = label_readmission(adms, task.gap_days)
        elif task.task is Task.PHENOTYPE:
            labels, excluded = label_phenotype(adms, dx_roots, task.phenotype_target)
        else:
            continue
        hadm_labels.update(labels)
        hadm_excluded.update(excluded)

    if task.setting is Setting.ICU:
        units = sorted(((s.stay_id, s.hadm_id, s) for s in tables.icustays), key=lambda u: u[0])
    else:
        units = sorted(((a.hadm_id, a.hadm_id, None) for a in admissions.values()), key=lambda u: u[0])
    report.n_input = len(units)

    samples = []
    for sample_id, hadm_id, stay in units:
        try:
            adm = admissions.get(hadm_id)
            if adm is None:
                raise Excluded("orphan_stay")
            if adm.admit_time > adm.discharge_time:
                raise Excluded("invalid_admission_times")
            if stay is not None:
                if stay.in_time > stay.out_time:
                    raise Excluded("invalid_stay_times")
                bounds = (stay.in_time, stay.out_time)
            else:
                bounds = (adm.admit_time, adm.discharge_time)
            patient = patients.get(adm.subject_id)
            if patient is None:
                raise Excluded("missing_patient")
            try:
                age = compute_age(patient.anchor_age, patient.anchor_year, adm.admit_time)
            except DataError:
                raise Excluded("invalid_age") from None
            if age < ADULT_AGE:
                raise Excluded("under_18")
            if task.disease_filter and task.disease_filter not in dx_roots.get(hadm_id, ()):
                raise Excluded("disease_filter")

            if task.task is Task.MORTALITY:
                label = label_mortality(adm, task.window_hours, bounds)
            elif task.task is Task.LENGTH_OF_STAY:
                label = label_los(adm, task.los_threshold_days, bounds)
            else:
                if hadm_id in hadm_excluded:
                    raise Excluded(hadm_excluded[hadm_id])
                label = hadm_labels[hadm_id]
            if bounds[1] - bounds[0] < task.window_hours * HOUR:
                raise Excluded("stay_shorter_than_window")
        except Excluded as exc:
            report.excluded[exc.reason] += 1
            continue
        window_start, window_end = observation_window(task, *bounds)
        samples.append(CohortSample(
            sample_id=sample_id, subject_id=adm.subject_id, hadm_id=hadm_id,
            stay_id=stay.stay_id if stay is not None else None, label=label,
            window_start=window_start, window_end=window_end, age=age,
            gender=patient.gender, ethnicity=adm.ethnicity, insurance=adm.insurance,
        ))

    report.n_samples = len(samples)
    report.n_positive = sum(s.label for s in samples)
    if not samples:
        msg = "cohort is empty after inclusion criteria"
        report.warnings.append(msg)
        log.warning(msg)
    return samples, report


def describe_sample(sample: CohortSample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "label": sample.label,
        "window_start": format_timestamp(sample.window_start),
        "window_end": format_timestamp(sample.window_end),
    }
