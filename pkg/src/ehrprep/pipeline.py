"""The end-to-end pipeline, split into stages so the wizard can pause between them.

A run is a pure function of the input tables and the :class:`Config`; every
file it writes is byte-stable, so replaying ``provenance.cfg`` reproduces the
output directory exactly.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .cleaning import OutlierMode, OutlierPolicy, clean_measurements, harmonize_units, load_unit_rules
from .cohort import Setting, TaskSpec, extract_cohort
from .config import Config
from .errors import DataError
from .evaluation import (age_band, evaluate, fairness, render_fairness_gaps, render_fairness_report,
                         write_metrics)
from .features import apply_selection, summarize, write_summary
from .grouping import IcdMapTable, NdcDirectory, diagnosis_roots, medication_group
from .ingest import check_referential_integrity, load_tables
from .modeling import LogisticRegression, Shaping, cross_validate, shape
from .store import write_bundle, write_manifest, write_sample
from .timeseries import (DIAGNOSES, LABS, MEDICATIONS, PROCEDURES, VITALS, EventArrays, FeatureRegistry,
                         GridSpec, build_tensors, verify_times)

log = logging.getLogger(__name__)

DYNAMIC = (LABS, VITALS, MEDICATIONS, PROCEDURES)
MEASUREMENTS = (LABS, VITALS)
MISSING_DOSE = 1.0


@dataclass(frozen=True, slots=True)
class FamilyEvent:
    """One event attached to a cohort sample (``pos`` indexes the sample list)."""

    pos: int
    family: str
    code: str
    time: int
    value: Optional[float]
    stop: Optional[int] = None
    unit: Optional[str] = None
    item_id: int = 0


def task_spec(config: Config) -> TaskSpec:
    kind = config["task.kind"]
    return TaskSpec(
        task=kind,
        setting=config["task.setting"],
        window_hours=config.get_int("task.window_hours"),
        disease_filter=config.get_root("task.disease_filter"),
        gap_days=config.get_int("task.gap_days") if kind == "Readmission" else 30,
        los_threshold_days=config.get_int("task.los_threshold_days") if kind == "LengthOfStay" else 3,
        phenotype_target=config.get_root("task.phenotype_target") if kind == "Phenotype" else None,
    )


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)


class Pipeline:
    """Stages run in order: extract, summarize, select, clean, regularize, write, model, evaluate."""

    def __init__(self, config: Config, input_dir, output_dir, threads: int = 1):
        self.config = config
        self.input_dir = Path(input_dir)
        self.out = Path(output_dir)
        self.threads = max(1, int(threads))
        self.families = set(config["features.families"].split(","))
        self.tally: dict[str, Counter] = defaultdict(Counter)
        self.warnings: list[str] = []
        self.samples = []
        self.events: dict[str, list] = {}
        self.static_roots: list[set] = []
        self.summaries: dict[str, list] = {}
        self.tensors = []
        self.registry: Optional[FeatureRegistry] = None
        self.scores: Optional[np.ndarray] = None

    # stage 1: tables, cohort, windowed events

    def extract(self):
        cfg = self.config
        if not self.input_dir.is_dir():
            raise DataError(f"input directory {self.input_dir} does not exist")
        tables = load_tables(self.input_dir, self.threads)
        self.parse_reports = tables.reports
        self.integrity = check_referential_integrity(tables)
        if not self.integrity.ok:
            total = sum(self.integrity.violations.values())
            self.warnings.append(f"{total} referential-integrity violations")
        try:
            icd_map = IcdMapTable.load(cfg.resource("grouping.icd_map"))
            ndc_dir = NdcDirectory.load(cfg.resource("grouping.ndc_directory"))
        except OSError as exc:
            raise DataError(f"cannot load grouping resource: {exc}") from None
        self.tally["grouping"]["icd_ties_resolved"] = icd_map.ties_resolved
        dx_roots = diagnosis_roots(tables.diagnoses_icd, icd_map, self.tally["grouping"])
        task = task_spec(cfg)
        self.task = task
        samples, self.cohort_report = extract_cohort(tables, task, icd_map, dx_roots)
        self.samples = samples
        self.warnings.extend(self.cohort_report.warnings)

        icu = task.setting is Setting.ICU
        stay_to_hadm = {s.stay_id: s.hadm_id for s in tables.icustays}
        by_hadm, by_stay = defaultdict(list), {}
        for pos, s in enumerate(samples):
            by_hadm[s.hadm_id].append(pos)
            if s.stay_id is not None:
                by_stay[s.stay_id] = pos

        def positions(hadm_id, stay_id):
            if icu:
                if stay_id is not None:
                    p = by_stay.get(stay_id)
                    return () if p is None else (p,)
                return by_hadm.get(hadm_id, ())
            if hadm_id is None:
                hadm_id = stay_to_hadm.get(stay_id)
            return by_hadm.get(hadm_id, ())

        # with the cohort population the window cut waits until the time-series stage
        early_cut = cfg["cleaning.outlier_population"] == "window"

        def inside(pos, t, stop=None):
            s = samples[pos]
            if not early_cut:
                return True
            if stop is not None:
                return stop >= s.window_start and t <= s.window_end
            return s.window_start <= t <= s.window_end

        events: dict[str, list] = {f: [] for f in DYNAMIC}
        sources = {LABS: tables.labevents, VITALS: tables.chartevents}
        for fam in MEASUREMENTS:
            if fam not in self.families:
                continue
            for row in sources[fam]:
                for pos in positions(row.hadm_id, row.stay_id):
                    if inside(pos, row.chart_time):
                        events[fam].append(FamilyEvent(pos, fam, str(row.item_id), row.chart_time, row.value,
                                                       unit=row.unit, item_id=row.item_id))
        if MEDICATIONS in self.families:
            meds = tables.inputevents if icu else tables.prescriptions
            _, meds, verification = verify_times(tables.admissions, meds, stay_to_hadm)
            self.tally["verification"].update(verification.actions)
            for row in meds:
                code = medication_group(row, ndc_dir, self.tally["grouping"])
                dose = row.dose
                if dose is None:
                    dose = MISSING_DOSE
                    self.tally["timeseries"]["medication_dose_missing"] += 1
                for pos in positions(row.hadm_id, row.stay_id):
                    if inside(pos, row.start_time, row.stop_time):
                        events[MEDICATIONS].append(FamilyEvent(pos, MEDICATIONS, code, row.start_time, dose,
                                                               stop=row.stop_time))
        if PROCEDURES in self.families:
            procs = tables.procedureevents if icu else tables.procedures_icd
            for row in procs:
                for pos in positions(row.hadm_id, row.stay_id):
                    if inside(pos, row.event_time):
                        events[PROCEDURES].append(FamilyEvent(pos, PROCEDURES, row.code, row.event_time, 1.0))
        self.events = events
        if DIAGNOSES in self.families:
            self.static_roots = [set(dx_roots.get(s.hadm_id, ())) for s in samples]
        else:
            self.static_roots = [set() for _ in samples]
        return self

    # stage 2: feature summaries shown before selection

    def summarize(self, write: bool = True):
        n = len(self.samples)
        for fam in DYNAMIC:
            if fam in self.families:
                rows = [(e.pos, e.code, e.value is None) for e in self.events[fam]]
                self.summaries[fam] = summarize(rows, n)
        if DIAGNOSES in self.families:
            rows = [(pos, root, False) for pos, roots in enumerate(self.static_roots) for root in sorted(roots)]
            self.summaries[DIAGNOSES] = summarize(rows, n)
        if write:
            target = self.out / "summaries"
            target.mkdir(parents=True, exist_ok=True)
            for fam, rows in self.summaries.items():
                write_summary(target / f"{fam}_summary.csv", rows)
        return self

    # stage 3: keep-lists

    def select(self):
        sel_warnings = []
        for fam in DYNAMIC:
            if fam in self.families:
                keep = self.config.selection(fam)
                self.events[fam] = apply_selection(self.events[fam], keep, lambda e: e.code, sel_warnings)
        if DIAGNOSES in self.families:
            keep = self.config.selection(DIAGNOSES)
            if keep is not None:
                keep_set = set(keep)
                present = set().union(*self.static_roots) if self.static_roots else set()
                for code in sorted(keep_set - present):
                    sel_warnings.append(f"selected code {code!r} does not occur in the cohort")
                self.static_roots = [roots & keep_set for roots in self.static_roots]
        self.warnings.extend(sel_warnings)
        return self

    # stage 4: unit harmonization and outlier handling on measurements

    def clean(self):
        cfg = self.config
        rules_setting = cfg["cleaning.unit_rules"]
        if rules_setting == "none":
            rules = {}
        else:
            try:
                rules = load_unit_rules(cfg.resource("cleaning.unit_rules"))
            except OSError as exc:
                raise DataError(f"cannot load unit rules: {exc}") from None
        policy = OutlierPolicy(cfg.get_float("cleaning.outlier_threshold"), OutlierMode(cfg["cleaning.outlier_mode"]))
        for fam in MEASUREMENTS:
            if fam in self.families:
                rows = harmonize_units(self.events[fam], rules, self.tally["cleaning"])
                self.events[fam] = clean_measurements(rows, policy, lambda e: e.code, self.tally["cleaning"])
        return self

    # stage 5: window cut, registry and tensors

    def cut_to_windows(self):
        """Drop events that cannot touch their sample's observation window."""
        def keep(e):
            s = self.samples[e.pos]
            if e.stop is not None:
                return e.stop >= s.window_start and e.time <= s.window_end
            return s.window_start <= e.time <= s.window_end

        for fam in DYNAMIC:
            if fam in self.families:
                before = len(self.events[fam])
                self.events[fam] = [e for e in self.events[fam] if keep(e)]
                self.tally["timeseries"][f"{fam}_outside_window"] += before - len(self.events[fam])
        return self

    def regularize(self):
        cfg = self.config
        self.cut_to_windows()
        dynamic = [(fam, code) for fam in DYNAMIC if fam in self.families
                   for code in sorted({e.code for e in self.events[fam]})]
        static = sorted(set().union(*self.static_roots)) if self.static_roots else []
        registry = FeatureRegistry(
            dynamic=dynamic, static=static,
            ethnicity_vocab=sorted({s.ethnicity for s in self.samples}),
            insurance_vocab=sorted({s.insurance for s in self.samples}),
        )
        grid = GridSpec(cfg.get_float("timeseries.resolution_hours"), cfg.get_int("task.window_hours"))
        m_rows = self.events[LABS] + self.events[VITALS]
        measurements = EventArrays.from_lists(
            [e.pos for e in m_rows], [registry.index[(e.family, e.code)] for e in m_rows],
            [e.time for e in m_rows], [np.nan if e.value is None else e.value for e in m_rows])
        meds = self.events[MEDICATIONS]
        medications = EventArrays.from_lists(
            [e.pos for e in meds], [registry.index[(e.family, e.code)] for e in meds],
            [e.time for e in meds], [e.value for e in meds], [e.stop for e in meds])
        procs = self.events[PROCEDURES]
        procedures = EventArrays.from_lists(
            [e.pos for e in procs], [registry.index[(e.family, e.code)] for e in procs], [e.time for e in procs])
        self.grid = grid
        self.registry = registry
        self.tensors = build_tensors(
            self.samples, registry, grid, measurements, medications, procedures, self.static_roots,
            cfg["timeseries.imputation"], cfg["timeseries.aggregator"], self.threads, self.tally["timeseries"])
        return self

    # stage 6: files

    def write_outputs(self):
        out = self.out
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {out}: {exc}") from None
        for tensor in self.tensors:
            write_sample(out, tensor, self.registry)
        write_manifest(out / "cohort_manifest.csv", self.samples)
        if self.config.get_bool("output.bundle"):
            write_bundle(out / "bundle.ehrf", self.tensors, self.samples, self.registry)
        _write_text(out / "cohort_report.txt", self.cohort_report.to_text())
        _write_text(out / "cohort_report.json", self.cohort_report.to_json())
        _write_text(out / "provenance.cfg", self.config.to_text())
        return self

    # stage 7: optional baseline model

    def model(self):
        cfg = self.config
        if not cfg.get_bool("model.enabled"):
            return self
        labels = np.array([s.label for s in self.samples], dtype=np.int64)
        folds = cfg.get_int("model.folds")
        if len(set(labels.tolist())) < 2 or len(labels) < folds:
            self.warnings.append(f"modeling skipped: {len(labels)} samples, "
                                 f"{len(set(labels.tolist()))} label classes, {folds} folds requested")
            log.warning(self.warnings[-1])
            return self
        X, y = shape(self.tensors, labels, Shaping(cfg["model.shaping"]))
        seed = cfg.get_int("meta.seed")

        def make_model(model_seed):
            return LogisticRegression(
                learning_rate=cfg.get_float("model.learning_rate"), epochs=cfg.get_int("model.epochs"),
                l2=cfg.get_float("model.l2"), patience=cfg.get_int("model.patience"),
                validation_fraction=cfg.get_float("model.validation_fraction"), seed=model_seed)

        self.scores = cross_validate(X, y, make_model, folds, seed, cfg.get_bool("model.oversample"), self.warnings)
        with open(self.out / "predictions.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["sample_id", "label", "score"])
            for s, score in zip(self.samples, self.scores):
                writer.writerow([s.sample_id, s.label, repr(float(score))])
        return self

    # stage 8: optional reports

    def evaluate(self):
        cfg = self.config
        if not cfg.get_bool("evaluate.enabled") or self.scores is None:
            return self
        labels = [s.label for s in self.samples]
        threshold = cfg.get_float("evaluate.threshold")
        write_metrics(self.out / "metrics.csv",
                      evaluate(labels, self.scores, threshold, cfg.get_int("evaluate.calibration_bins")))
        report = fairness(labels, self.scores, threshold, demographic_groups(self.samples))
        self.warnings.extend(report.warnings)
        _write_text(self.out / "fairness.csv", render_fairness_report(report))
        _write_text(self.out / "fairness_gaps.csv", render_fairness_gaps(report))
        return self

    def write_run_report(self):
        doc = {
            "tool_version": __version__,
            "ingest": {name: {"rows": r.rows, "quarantined": r.quarantined, "reasons": dict(sorted(r.reasons.items()))}
                       for name, r in sorted(self.parse_reports.items())},
            "integrity": {"by_category": dict(sorted(self.integrity.violations.items())),
                          "by_table": dict(sorted(self.integrity.by_table.items()))},
            "cohort": self.cohort_report.to_dict(),
            "tallies": {stage: dict(sorted(c.items())) for stage, c in sorted(self.tally.items())},
            "n_features": {"dynamic": len(self.registry.dynamic) if self.registry else 0,
                           "static": len(self.registry.static) if self.registry else 0},
            "warnings": self.warnings,
        }
        _write_text(self.out / "run_report.json", json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
        return self

    def run(self):
        (self.extract().summarize().select().clean().regularize().write_outputs()
         .model().evaluate().write_run_report())
        return self


def demographic_groups(samples) -> dict[str, list[str]]:
    return {
        "gender": [s.gender for s in samples],
        "ethnicity": [s.ethnicity for s in samples],
        "age": [age_band(s.age) for s in samples],
    }


def run_pipeline(config: Config, input_dir, output_dir, threads: int = 1) -> Pipeline:
    return Pipeline(config, input_dir, output_dir, threads).run()
