"""Time verification, uniform binning and imputation of per-sample event streams."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .. import ConfigError
from ..timeutil import HOUR
from . import kernels

LABS, VITALS, MEDICATIONS, PROCEDURES = "labs", "vitals", "medications", "procedures"
DIAGNOSES = "diagnoses"
MEASUREMENT_FAMILIES = (LABS, VITALS)
DYNAMIC_FAMILIES = (LABS, VITALS, MEDICATIONS, PROCEDURES)
AGGREGATORS = tuple(kernels.AGG_CODES)


class Imputation(str, Enum):
    FORWARD_FILL_MEAN = "ForwardFillMean"
    NONE = "None"


@dataclass(frozen=True)
class GridSpec:
    resolution_hours: float
    window_hours: int

    def __post_init__(self):
        res = self.resolution_hours
        if not res > 0:
            raise ConfigError(f"resolution_hours must be positive, got {res}")
        if res * HOUR != int(res * HOUR):
            raise ConfigError(f"resolution_hours must be a whole number of seconds, got {res}")
        if self.window_seconds % self.res_seconds:
            raise ConfigError(
                f"window of {self.window_hours} h is not divisible into {res} h bins")

    @property
    def res_seconds(self) -> int:
        return int(self.resolution_hours * HOUR)

    @property
    def window_seconds(self) -> int:
        return int(self.window_hours) * HOUR

    @property
    def n_bins(self) -> int:
        return self.window_seconds // self.res_seconds


@dataclass
class FeatureRegistry:
    """Frozen column layout shared by every sample of a cohort."""

    dynamic: list[tuple[str, str]] = field(default_factory=list)
    static: list[str] = field(default_factory=list)
    ethnicity_vocab: list[str] = field(default_factory=list)
    insurance_vocab: list[str] = field(default_factory=list)

    def __post_init__(self):
        order = {fam: i for i, fam in enumerate(DYNAMIC_FAMILIES)}
        fams = [order[f] for f, _ in self.dynamic]
        if fams != sorted(fams):
            raise ValueError("dynamic features must be grouped in family order")
        self.index = {key: i for i, key in enumerate(self.dynamic)}
        self.static_index = {root: i for i, root in enumerate(self.static)}

    @property
    def n_measurement(self) -> int:
        return sum(1 for fam, _ in self.dynamic if fam in MEASUREMENT_FAMILIES)

    @property
    def dynamic_names(self) -> list[str]:
        return [f"{fam}:{code}" for fam, code in self.dynamic]

    @property
    def demographic_names(self) -> list[str]:
        return ["age", "gender", "ethnicity", "insurance"]

    def encode_demographics(self, age, gender, ethnicity, insurance) -> np.ndarray:
        return np.array([
            float(age),
            1.0 if gender == "M" else 0.0,
            float(self.ethnicity_vocab.index(ethnicity)),
            float(self.insurance_vocab.index(insurance)),
        ])


@dataclass
class SampleTensor:
    sample_id: int
    dynamic: np.ndarray
    presence: np.ndarray
    static: np.ndarray
    demographic: np.ndarray

    def identical(self, other: "SampleTensor") -> bool:
        """Bit-level equality of every array."""
        return self.sample_id == other.sample_id and all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(
                (self.dynamic, self.presence, self.static, self.demographic),
                (other.dynamic, other.presence, other.static, other.demographic),
            )
        )


@dataclass
class VerificationReport:
    actions: Counter = field(default_factory=Counter)


def verify_times(admissions, medications, stay_to_hadm: Optional[dict] = None):
    """Drop inconsistent admissions and medications; clamp medication times to the admission.

    Returns ``(admissions, medications, report)``. Medications keyed by stay
    are resolved to their admission through ``stay_to_hadm``.
    """
    report = VerificationReport()
    stay_to_hadm = stay_to_hadm or {}
    valid = []
    for adm in admissions:
        if adm.admit_time > adm.discharge_time:
            report.actions["admission_admit_after_discharge"] += 1
        else:
            valid.append(adm)
    bounds = {a.hadm_id: (a.admit_time, a.discharge_time) for a in valid}
    kept = []
    for med in medications:
        hadm = med.hadm_id if med.hadm_id is not None else stay_to_hadm.get(med.stay_id)
        if hadm not in bounds:
            report.actions["medication_without_valid_admission"] += 1
            continue
        admit, discharge = bounds[hadm]
        if med.start_time > med.stop_time:
            report.actions["medication_start_after_stop"] += 1
            continue
        if med.start_time > discharge:
            report.actions["medication_start_after_discharge"] += 1
            continue
        if med.stop_time < admit:
            report.actions["medication_stop_before_admit"] += 1
            continue
        start, stop = med.start_time, med.stop_time
        if start < admit:
            report.actions["medication_start_clamped"] += 1
            start = admit
        if stop > discharge:
            report.actions["medication_stop_clamped"] += 1
            stop = discharge
        if (start, stop) != (med.start_time, med.stop_time):
            med = type(med)(med.hadm_id, med.stay_id, med.drug_name, med.ndc, start, stop, med.dose, med.dose_unit)
        kept.append(med)
    return valid, kept, report


@dataclass
class EventArrays:
    """Flat columnar events for a whole cohort; ``pos`` indexes into the sample list.

    Measurements use ``time`` and ``value`` (NaN when no number was recorded).
    Medications use ``time`` as start plus ``stop`` and ``value`` as dose.
    Procedures use ``time`` only.
    """

    pos: np.ndarray
    col: np.ndarray
    time: np.ndarray
    value: np.ndarray
    stop: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, intervals: bool = False) -> "EventArrays":
        i = np.zeros(0, dtype=np.int64)
        return cls(i, i.copy(), i.copy(), np.zeros(0), i.copy() if intervals else None)

    @classmethod
    def from_lists(cls, pos, col, time, value=None, stop=None) -> "EventArrays":
        n = len(pos)
        return cls(
            np.asarray(pos, dtype=np.int64).reshape(n),
            np.asarray(col, dtype=np.int64).reshape(n),
            np.asarray(time, dtype=np.int64).reshape(n),
            np.asarray(value if value is not None else np.ones(n), dtype=np.float64).reshape(n),
            None if stop is None else np.asarray(stop, dtype=np.int64).reshape(n),
        )

    def __len__(self):
        return len(self.pos)


def _csr(n_samples, events: EventArrays):
    order = np.argsort(events.pos, kind="stable")
    counts = np.bincount(events.pos, minlength=n_samples)
    offsets = np.zeros(n_samples + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return order, offsets


def bin_measurement_batch(window_starts, events: EventArrays, grid: GridSpec, n_feat: int,
                          aggregator: str = "mean", impute: int = kernels.IMPUTE_RAW, threads: int = 1):
    """Bin (and optionally impute) measurement events for many samples at once.

    Returns ``(values, presence)`` of shape (n_samples, n_bins, n_feat).
    """
    window_starts = np.asarray(window_starts, dtype=np.int64)
    order, offsets = _csr(len(window_starts), events)
    pos = events.pos[order]
    rel = events.time[order] - window_starts[pos]
    return kernels.bin_measurements(
        offsets, np.ascontiguousarray(rel), np.ascontiguousarray(events.col[order]),
        np.ascontiguousarray(events.value[order]), grid.window_seconds, grid.res_seconds,
        grid.n_bins, n_feat, kernels.AGG_CODES[aggregator], impute, threads)


def bin_interval_batch(window_starts, events: EventArrays, grid: GridSpec, n_feat: int, col_offset: int = 0):
    """Write each medication's dose into every bin its [start, stop] interval touches."""
    n = len(window_starts)
    values = np.zeros((n, grid.n_bins, n_feat))
    presence = np.zeros((n, grid.n_bins, n_feat), dtype=np.uint8)
    if len(events) == 0:
        return values, presence
    ws = np.asarray(window_starts, dtype=np.int64)[events.pos]
    start, stop = events.time - ws, events.stop - ws
    keep = (stop >= 0) & (start <= grid.window_seconds) & (start <= stop)
    pos, col, dose = events.pos[keep], events.col[keep] - col_offset, events.value[keep]
    k0 = np.minimum(np.maximum(start[keep], 0) // grid.res_seconds, grid.n_bins - 1)
    k1 = np.minimum(np.minimum(stop[keep], grid.window_seconds) // grid.res_seconds, grid.n_bins - 1)
    lengths = k1 - k0 + 1
    rep = np.repeat(np.arange(len(k0)), lengths)
    bins = k0[rep] + (np.arange(len(rep)) - np.repeat(np.cumsum(lengths) - lengths, lengths))
    flat = (pos[rep] * grid.n_bins + bins) * n_feat + col[rep]
    np.add.at(values.reshape(-1), flat, dose[rep])
    presence.reshape(-1)[flat] = 1
    return values, presence


def bin_point_batch(window_starts, events: EventArrays, grid: GridSpec, n_feat: int, col_offset: int = 0):
    """Mark 1 in the bin holding each procedure time."""
    n = len(window_starts)
    values = np.zeros((n, grid.n_bins, n_feat))
    presence = np.zeros((n, grid.n_bins, n_feat), dtype=np.uint8)
    if len(events) == 0:
        return values, presence
    rel = events.time - np.asarray(window_starts, dtype=np.int64)[events.pos]
    keep = (rel >= 0) & (rel <= grid.window_seconds)
    k = np.minimum(rel[keep] // grid.res_seconds, grid.n_bins - 1)
    flat = (events.pos[keep] * grid.n_bins + k) * n_feat + (events.col[keep] - col_offset)
    values.reshape(-1)[flat] = 1.0
    presence.reshape(-1)[flat] = 1
    return values, presence


def _family_span(registry: FeatureRegistry, families) -> tuple[int, int]:
    cols = [i for i, (fam, _) in enumerate(registry.dynamic) if fam in families]
    if not cols:
        return 0, 0
    return cols[0], cols[-1] + 1


@dataclass
class BinnedGrid:
    """Binned events before imputation; measurement bins without a value hold NaN."""

    values: np.ndarray
    presence: np.ndarray
    n_measurement: int


def bin_cohort(window_starts, registry: FeatureRegistry, grid: GridSpec, measurements: EventArrays,
               medications: EventArrays, procedures: EventArrays, aggregator: str = "mean",
               impute: int = kernels.IMPUTE_RAW, threads: int = 1) -> BinnedGrid:
    n = len(window_starts)
    n_feat = len(registry.dynamic)
    values = np.zeros((n, grid.n_bins, n_feat))
    presence = np.zeros((n, grid.n_bins, n_feat), dtype=np.uint8)
    m0, m1 = _family_span(registry, MEASUREMENT_FAMILIES)
    if m1 > m0:
        v, p = bin_measurement_batch(window_starts, measurements, grid, m1 - m0, aggregator, impute, threads)
        values[:, :, m0:m1], presence[:, :, m0:m1] = v, p
    d0, d1 = _family_span(registry, (MEDICATIONS,))
    if d1 > d0:
        v, p = bin_interval_batch(window_starts, medications, grid, d1 - d0, d0)
        values[:, :, d0:d1], presence[:, :, d0:d1] = v, p
    p0, p1 = _family_span(registry, (PROCEDURES,))
    if p1 > p0:
        v, p = bin_point_batch(window_starts, procedures, grid, p1 - p0, p0)
        values[:, :, p0:p1], presence[:, :, p0:p1] = v, p
    return BinnedGrid(values, presence, registry.n_measurement)


@dataclass(frozen=True)
class Event:
    family: str
    code: str
    time: int
    value: Optional[float] = None
    stop: Optional[int] = None


def _split_events(events: Sequence[Event], registry: FeatureRegistry):
    meas, meds, procs = [], [], []
    for ev in events:
        col = registry.index.get((ev.family, str(ev.code)))
        if col is None:
            continue
        if ev.family in MEASUREMENT_FAMILIES:
            meas.append((0, col, ev.time, np.nan if ev.value is None else ev.value, 0))
        elif ev.family == MEDICATIONS:
            meds.append((0, col, ev.time, 1.0 if ev.value is None else ev.value, ev.stop))
        else:
            procs.append((0, col, ev.time, 1.0, 0))

    def arrays(rows, intervals=False):
        if not rows:
            return EventArrays.empty(intervals)
        pos, col, time, value, stop = zip(*rows)
        return EventArrays.from_lists(pos, col, time, value, stop if intervals else None)

    return arrays(meas), arrays(meds, True), arrays(procs)


def bin_events(events: Sequence[Event], window_start: int, grid: GridSpec, registry: FeatureRegistry,
               aggregator: str = "mean") -> BinnedGrid:
    """Bin one sample's events onto the grid anchored at ``window_start``.

    Bin k covers [start + k*res, start + (k+1)*res); the final bin also
    includes the window's right edge. Events outside the window are ignored.
    """
    meas, meds, procs = _split_events(events, registry)
    binned = bin_cohort([window_start], registry, grid, meas, meds, procs, aggregator)
    return BinnedGrid(binned.values[0], binned.presence[0], binned.n_measurement)


def impute(binned: BinnedGrid, mode: Imputation | str = Imputation.FORWARD_FILL_MEAN) -> np.ndarray:
    """Fill missing measurement bins; medication and procedure columns are left as binned."""
    mode = Imputation(mode)
    code = kernels.IMPUTE_FFILL_MEAN if mode is Imputation.FORWARD_FILL_MEAN else kernels.IMPUTE_ZERO
    values = np.array(binned.values, dtype=np.float64, copy=True)
    squeeze = values.ndim == 2
    if squeeze:
        values = values[None]
    m = binned.n_measurement
    values[:, :, :m] = kernels.impute_grid(np.ascontiguousarray(values[:, :, :m]), code)
    return values[0] if squeeze else values


def build_tensors(samples, registry: FeatureRegistry, grid: GridSpec, measurements: EventArrays,
                  medications: EventArrays, procedures: EventArrays, static_roots: Sequence[set],
                  imputation: Imputation | str = Imputation.FORWARD_FILL_MEAN, aggregator: str = "mean",
                  threads: int = 1, tally: Optional[Counter] = None) -> list[SampleTensor]:
    """Regularize every cohort sample into a :class:`SampleTensor`.

    Event ``pos`` fields index ``samples``. Binning and imputation only see
    events inside each sample's own window.
    """
    imputation = Imputation(imputation)
    code = kernels.IMPUTE_FFILL_MEAN if imputation is Imputation.FORWARD_FILL_MEAN else kernels.IMPUTE_ZERO
    starts = [s.window_start for s in samples]
    binned = bin_cohort(starts, registry, grid, measurements, medications, procedures, aggregator, code, threads)
    if tally is not None and registry.n_measurement:
        rel = measurements.time - np.asarray(starts, dtype=np.int64)[measurements.pos] if len(measurements) else measurements.time
        inside = (rel >= 0) & (rel <= grid.window_seconds) & ~np.isnan(measurements.value)
        observed = len(np.unique(measurements.pos[inside] * registry.n_measurement + measurements.col[inside]))
        tally["measurement_zero_filled"] += len(samples) * registry.n_measurement - observed
    tensors = []
    for i, sample in enumerate(samples):
        static = np.zeros(len(registry.static), dtype=np.uint8)
        for root in static_roots[i]:
            j = registry.static_index.get(root)
            if j is not None:
                static[j] = 1
        demo = registry.encode_demographics(sample.age, sample.gender, sample.ethnicity, sample.insurance)
        tensors.append(SampleTensor(sample.sample_id, binned.values[i], binned.presence[i], static, demo))
    return tensors
