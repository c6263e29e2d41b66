"""Ten hand-built admissions whose labels are enumerated by hand for every task.

Day offsets are from 2150-01-01 00:00. Patients:
  1  F 60  A101 d0-d4 (I50 via ICD-9 4280), A102 d34-d37 (N18), A103 d100 +50h died (I50)
  2  M 17  A201 d0-d5                                   -> under 18
  3  M 45  A301 d10-d14, A302 30 days + 1 s later, +30h died (I25 via ICD-9 41401)
  4  F 70  A401 d0-d2 (J44), A402 d1-d3 overlaps A401 (I50)
  5  F 30  A501 d0-d10 (N18 + unmapped 9999X), A502 d20-d25 with a death time before admission
ICU stays: S1011 in A101 (72 h), S1031 in A103 (48 h), S9991 whose admission does not exist.
"""
from ehrprep.ingest import AdmissionRow, DiagnosisRow, IcuStayRow, PatientRow, Tables
from ehrprep.timeutil import DAY, HOUR, parse_timestamp

T0 = parse_timestamp("2150-01-01 00:00:00")


def d(days, hours=0, seconds=0):
    return T0 + int(days * DAY) + hours * HOUR + seconds


def _adm(hadm, subject, admit, discharge, death=None, expire=False):
    return AdmissionRow(hadm, subject, admit, discharge, death, expire, "Medicare", "WHITE")


def hand_tables() -> Tables:
    patients = [
        PatientRow(1, "F", 60, 2150, None),
        PatientRow(2, "M", 17, 2150, None),
        PatientRow(3, "M", 45, 2150, None),
        PatientRow(4, "F", 70, 2150, None),
        PatientRow(5, "F", 30, 2150, None),
    ]
    a302_admit = d(14) + 30 * DAY + 1
    admissions = [
        _adm(101, 1, d(0), d(4)),
        _adm(102, 1, d(34), d(37)),
        _adm(103, 1, d(100), d(100, 50), death=d(100, 50), expire=True),
        _adm(201, 2, d(0), d(5)),
        _adm(301, 3, d(10), d(14)),
        _adm(302, 3, a302_admit, a302_admit + 30 * HOUR, death=a302_admit + 30 * HOUR, expire=True),
        _adm(401, 4, d(0), d(2)),
        _adm(402, 4, d(1), d(3)),
        _adm(501, 5, d(0), d(10)),
        _adm(502, 5, d(20), d(25), death=d(19)),
    ]
    diagnoses = [
        DiagnosisRow(101, "4280", 9),
        DiagnosisRow(102, "N183", 10),
        DiagnosisRow(103, "I5023", 10),
        DiagnosisRow(302, "41401", 9),
        DiagnosisRow(401, "49121", 9),
        DiagnosisRow(402, "I509", 10),
        DiagnosisRow(501, "N184", 10),
        DiagnosisRow(501, "9999X", 9),
    ]
    stays = [
        IcuStayRow(1011, 101, d(0, 12), d(3, 12)),
        IcuStayRow(1031, 103, d(100, 1), d(100, 49)),
        IcuStayRow(9991, 999, d(0), d(3)),
    ]
    return Tables(patients=patients, admissions=admissions, diagnoses_icd=diagnoses, icustays=stays)


# (task kwargs) -> (labels by sample id, exclusion counts)
EXPECTED = [
    (dict(task="Mortality", setting="NonICU", window_hours=48),
     {101: 0, 102: 0, 103: 1, 301: 0, 401: 0, 402: 0, 501: 0},
     {"under_18": 1, "stay_shorter_than_window": 1, "death_before_admission": 1}),
    (dict(task="Mortality", setting="NonICU", window_hours=48, disease_filter="I50"),
     {101: 0, 103: 1, 402: 0},
     {"under_18": 1, "disease_filter": 6}),
    (dict(task="Readmission", setting="NonICU", window_hours=24, gap_days=30),
     {101: 1, 102: 0, 103: 0, 301: 0, 302: 0, 402: 0, 501: 1, 502: 0},
     {"under_18": 1, "overlapping_admissions": 1}),
    (dict(task="LengthOfStay", setting="NonICU", window_hours=24, los_threshold_days=3),
     {101: 1, 102: 0, 103: 0, 301: 1, 302: 0, 401: 0, 402: 0, 501: 1, 502: 1},
     {"under_18": 1}),
    (dict(task="Phenotype", setting="NonICU", window_hours=24, phenotype_target="I50"),
     {101: 0, 102: 1, 301: 0, 401: 1, 501: 0},
     {"under_18": 1, "no_next_admission": 4}),
    (dict(task="Mortality", setting="ICU", window_hours=48),
     {1011: 0, 1031: 1},
     {"orphan_stay": 1}),
    (dict(task="LengthOfStay", setting="ICU", window_hours=24, los_threshold_days=3),
     {1011: 0, 1031: 0},
     {"orphan_stay": 1}),
]
