"""Deterministic synthetic MIMIC-IV-shaped tables for tests and demos.

Every patient draws from its own counter-based Philox stream keyed by
``(seed, patient index)``, so the output is a pure function of the SynthSpec and
patients could be generated in any order or in parallel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .timeutil import DAY, HOUR, format_timestamp, parse_timestamp

DEFAULT_PREVALENCE = {"I50": 0.25, "N18": 0.3, "J44": 0.15, "I25": 0.25}

# ICD-10 and ICD-9 forms per target root (ICD-9 forms are present in the bundled map)
ROOT_CODES = {
    "I50": (["I5023", "I509", "I5032", "I501"], ["4280", "42823", "42832", "4281"]),
    "N18": (["N183", "N184", "N186", "N189"], ["5853", "5854", "5856", "5859"]),
    "J44": (["J449", "J441", "J440"], ["496", "49121", "49122"]),
    "I25": (["I2510", "I259", "I252"], ["41401", "4149", "412"]),
}
DECOY_CODES = (["I10", "E119", "E785", "K219", "E039", "I4891", "N179", "J189"],
               ["4019", "25000", "2724", "53081", "2449", "42731", "5849", "486"])

LAB_ITEMS = {  # item: (unit, mean, sd)
    50912: ("mg/dL", 1.1, 0.3),
    50971: ("mEq/L", 4.2, 0.4),
    50983: ("mEq/L", 139.0, 3.0),
    51222: ("g/dL", 11.5, 1.5),
}
VITAL_ITEMS = {
    220045: ("bpm", 85.0, 12.0),
    220179: ("mmHg", 120.0, 15.0),
    223761: ("degC", 37.0, 0.5),
    226512: ("kg", 80.0, 15.0),
}
PRESCRIPTION_NDCS = [  # (ndc as printed in the source table, drug label, dose unit)
    ("0002-1433-80", "Trulicity", "mg"),
    ("00009-0090-01", "Cleocin", "mg"),
    ("00074-3799-90", "Synthroid", "mcg"),
    ("00338-0017-04", "Dextrose 5%", "mL"),
    ("00409-4888-10", "Sodium Chloride 0.9%", "mL"),
    ("63323-262-01", "Heparin", "UNIT"),
    ("00904-6305-1", "Aspirin EC", "mg"),
    ("51079-0255-20", "Lasix", "mg"),
    ("68180-0513-03", "Zestril", "mg"),
    ("99999-0001-01", "Investigational Drug", "mg"),
]
INPUT_ITEMS = {225158: "mL", 221906: "mg", 225152: "units"}
PROCEDURE_ICD = ["5A1955Z", "0BH17EZ", "3E0G76Z", "02HV33Z"]
PROCEDURE_ITEMS = ["225792", "224275", "225459"]
INSURANCE = ["Medicare", "Medicaid", "Other"]
ETHNICITY = ["WHITE", "BLACK/AFRICAN AMERICAN", "HISPANIC/LATINO", "ASIAN", "OTHER", "UNKNOWN"]

HEADERS = {
    "patients": ["subject_id", "gender", "anchor_age", "anchor_year", "dod"],
    "admissions": ["subject_id", "hadm_id", "admittime", "dischtime", "deathtime", "insurance", "ethnicity",
                   "hospital_expire_flag"],
    "diagnoses_icd": ["subject_id", "hadm_id", "seq_num", "icd_code", "icd_version"],
    "icustays": ["subject_id", "hadm_id", "stay_id", "intime", "outtime"],
    "labevents": ["subject_id", "hadm_id", "itemid", "charttime", "valuenum", "valueuom"],
    "chartevents": ["subject_id", "hadm_id", "stay_id", "itemid", "charttime", "valuenum", "valueuom"],
    "prescriptions": ["subject_id", "hadm_id", "starttime", "stoptime", "drug", "ndc", "dose_val_rx",
                      "dose_unit_rx"],
    "inputevents": ["subject_id", "hadm_id", "stay_id", "starttime", "endtime", "itemid", "amount", "amountuom"],
    "procedures_icd": ["subject_id", "hadm_id", "seq_num", "chartdate", "icd_code", "icd_version"],
    "procedureevents": ["subject_id", "hadm_id", "stay_id", "starttime", "itemid"],
}


@dataclass
class SynthSpec:
    seed: int = 42
    n_patients: int = 1000
    mean_admissions_per_patient: float = 2.0
    disease_prevalence: dict = field(default_factory=lambda: dict(DEFAULT_PREVALENCE))
    event_rate_per_hour: float = 1.0
    icu_fraction: float = 0.7
    corrupt_fraction: float = 0.0

    def __post_init__(self):
        if self.seed < 0 or int(self.seed) != self.seed:
            raise ConfigError("seed must be a non-negative integer")
        if self.n_patients <= 0:
            raise ConfigError("n_patients must be > 0")
        if not self.mean_admissions_per_patient >= 1:
            raise ConfigError("mean_admissions_per_patient must be >= 1")
        if not self.event_rate_per_hour > 0:
            raise ConfigError("event_rate_per_hour must be > 0")
        for name in ("icu_fraction", "corrupt_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for root, p in self.disease_prevalence.items():
            if not 0 <= p <= 1:
                raise ConfigError(f"prevalence of {root} must lie in [0, 1], got {p}")

    def to_config(self) -> str:
        prevalence = ",".join(f"{k}:{v!r}" for k, v in self.disease_prevalence.items())
        return "\n".join([
            f"synth.seed = {self.seed}",
            f"synth.n_patients = {self.n_patients}",
            f"synth.mean_admissions_per_patient = {self.mean_admissions_per_patient!r}",
            f"synth.disease_prevalence = {prevalence}",
            f"synth.event_rate_per_hour = {self.event_rate_per_hour!r}",
            f"synth.icu_fraction = {self.icu_fraction!r}",
            f"synth.corrupt_fraction = {self.corrupt_fraction!r}",
        ]) + "\n"

    @classmethod
    def from_config(cls, text: str) -> "SynthSpec":
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            stage, _, name = key.strip().partition(".")
            if stage != "synth" or name not in cls.__dataclass_fields__:
                raise ConfigError(f"unknown key {key.strip()!r}")
            value = value.strip()
            if name == "disease_prevalence":
                values[name] = {k.strip(): float(v) for k, v in
                                (item.split(":") for item in value.split(",") if item.strip())}
            elif name in ("seed", "n_patients"):
                values[name] = int(value)
            else:
                values[name] = float(value)
        return cls(**values)


def patient_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _ts(seconds) -> str:
    return format_timestamp(int(seconds))


def _num(x: float) -> str:
    return f"{x:.2f}"


def _uniform_times(rng, start, end, n):
    return np.sort(rng.integers(start, end + 1, size=n))


def _generate_patient(spec: SynthSpec, index: int) -> dict[str, list]:
    rng = patient_rng(spec.seed, index)
    rows: dict[str, list] = {name: [] for name in HEADERS}
    subject_id = 10_000_000 + index
    gender = "F" if rng.random() < 0.5 else "M"
    anchor_age = int(rng.integers(15, 92))
    anchor_year = int(rng.integers(2110, 2181))
    n_adm = 1 + int(rng.poisson(spec.mean_admissions_per_patient - 1))
    ethnicity = ETHNICITY[int(rng.choice(len(ETHNICITY), p=[0.55, 0.15, 0.1, 0.07, 0.08, 0.05]))]
    cursor = parse_timestamp(f"{anchor_year}-01-01 00:00:00") + int(rng.integers(0, 3 * 365 * DAY))
    dod = None
    corrupt = spec.corrupt_fraction

    for j in range(n_adm):
        hadm_id = 20_000_000 + index * 100 + j
        admit = cursor + int(rng.integers(0, DAY))
        los_hours = 6.0 + float(rng.exponential(110.0))
        discharge = admit + max(2 * HOUR, int(los_hours * HOUR))
        roots = [root for root, p in spec.disease_prevalence.items() if rng.random() < p]
        risk = 0.04 + 0.06 * ("N18" in roots) + 0.05 * ("I50" in roots) + 0.002 * max(anchor_age - 50, 0)
        died = rng.random() < risk
        death = discharge if died else None
        if rng.random() < corrupt:
            admit, discharge = discharge, admit
        rows["admissions"].append([
            subject_id, hadm_id, _ts(admit), _ts(discharge), "" if death is None else _ts(death),
            INSURANCE[int(rng.integers(len(INSURANCE)))], ethnicity, int(died)])
        lo, hi = min(admit, discharge), max(admit, discharge)
        severity = 1.0 + 0.25 * died + 0.1 * ("N18" in roots)

        seq = 1
        for root in roots:
            icd10, icd9 = ROOT_CODES.get(root, ([root + "9"], []))
            if icd9 and rng.random() < 0.5:
                code, version = icd9[int(rng.integers(len(icd9)))], 9
            else:
                code, version = icd10[int(rng.integers(len(icd10)))], 10
            rows["diagnoses_icd"].append([subject_id, hadm_id, seq, code, version])
            seq += 1
        for _ in range(int(rng.integers(1, 4))):
            version = 9 if rng.random() < 0.5 else 10
            pool = DECOY_CODES[0] if version == 10 else DECOY_CODES[1]
            rows["diagnoses_icd"].append([subject_id, hadm_id, seq, pool[int(rng.integers(len(pool)))], version])
            seq += 1

        hours = (hi - lo) / HOUR
        for item, (unit, mean, sd) in LAB_ITEMS.items():
            n = int(rng.poisson(spec.event_rate_per_hour * hours / (2 * len(LAB_ITEMS))))
            for t in _uniform_times(rng, lo - 6 * HOUR, hi, n):
                value = max(0.1, rng.normal(mean * (severity if item == 50912 else 1.0), sd))
                out_unit = unit
                if item == 50912 and rng.random() < 0.1:
                    value, out_unit = value * 88.4, "umol/L"
                text = "" if rng.random() < 0.05 else _num(value)
                if rng.random() < corrupt:
                    text = "abc"
                rows["labevents"].append([subject_id, hadm_id, item, _ts(t), text, out_unit])

        for _ in range(int(rng.integers(0, 5))):
            ndc, drug, unit = PRESCRIPTION_NDCS[int(rng.integers(len(PRESCRIPTION_NDCS)))]
            start = int(rng.integers(lo - 12 * HOUR, hi))
            stop = start + int(rng.integers(HOUR, 4 * DAY))
            if rng.random() < corrupt:
                start, stop = stop, start
            rows["prescriptions"].append([subject_id, hadm_id, _ts(start), _ts(stop), drug, ndc,
                                          _num(float(rng.integers(1, 20)) * 5), unit])
        for k in range(int(rng.integers(0, 3))):
            t = int(rng.integers(lo, hi + 1))
            rows["procedures_icd"].append([subject_id, hadm_id, k + 1, _ts(t)[:10],
                                           PROCEDURE_ICD[int(rng.integers(len(PROCEDURE_ICD)))], 10])

        if rng.random() < spec.icu_fraction and hi - lo >= 4 * HOUR:
            stay_id = 30_000_000 + index * 100 + j
            span = hi - lo
            in_time = lo + int(rng.integers(0, max(1, span // 4)))
            out_time = in_time + max(2 * HOUR, int((hi - in_time) * rng.uniform(0.6, 1.0)))
            out_time = min(out_time, hi)
            rows["icustays"].append([subject_id, hadm_id, stay_id, _ts(in_time), _ts(out_time)])
            stay_hours = (out_time - in_time) / HOUR
            for item, (unit, mean, sd) in VITAL_ITEMS.items():
                n = int(rng.poisson(spec.event_rate_per_hour * stay_hours / len(VITAL_ITEMS)))
                for t in _uniform_times(rng, in_time - 2 * HOUR, out_time, n):
                    shift = severity if item == 220045 else 1.0
                    value = rng.normal(mean * shift, sd)
                    out_unit = unit
                    if item == 226512 and rng.random() < 0.3:
                        value, out_unit = value / 0.453592, "lb"
                    text = "" if rng.random() < 0.03 else _num(value)
                    if rng.random() < corrupt:
                        text = "abc"
                    rows["chartevents"].append([subject_id, hadm_id, stay_id, item, _ts(t), text, out_unit])
            for _ in range(int(rng.integers(0, 4))):
                item = list(INPUT_ITEMS)[int(rng.integers(len(INPUT_ITEMS)))]
                start = int(rng.integers(in_time - 3 * HOUR, out_time))
                stop = start + int(rng.integers(HOUR // 2, DAY))
                rows["inputevents"].append([subject_id, hadm_id, stay_id, _ts(start), _ts(stop), item,
                                            _num(rng.uniform(1, 500)), INPUT_ITEMS[item]])
            for _ in range(int(rng.integers(0, 3))):
                t = int(rng.integers(in_time, out_time + 1))
                rows["procedureevents"].append([subject_id, hadm_id, stay_id, _ts(t),
                                                PROCEDURE_ITEMS[int(rng.integers(len(PROCEDURE_ITEMS)))]])
        if died:
            dod = death
            break
        cursor = max(admit, discharge) + int((1 + rng.exponential(60.0)) * DAY)

    rows["patients"].append([subject_id, gender, anchor_age, anchor_year, "" if dod is None else _ts(dod)[:10]])
    return rows


def generate(spec: SynthSpec, out_dir) -> dict[str, Path]:
    """Write one CSV per table into ``out_dir``; returns the written paths by table name."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc
    per_patient = [_generate_patient(spec, i) for i in range(spec.n_patients)]
    paths = {}
    for name, header in HEADERS.items():
        path = out / f"{name}.csv"
        try:
            with open(path, "w", encoding="utf-8", newline="") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(header)
                for rows in per_patient:
                    writer.writerows(rows[name])
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from exc
        paths[name] = path
    return paths
