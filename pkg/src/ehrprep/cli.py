"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad arguments or config), 2 data error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from .config import ANCHORS, KEY_INDEX, KEYS, TASK_SPECIFIC, Config
from .errors import ConfigError, DataError
from .evaluation import age_band, evaluate, fairness, render_fairness_gaps, render_fairness_report, write_metrics
from .features import read_keep_list
from .pipeline import DYNAMIC, Pipeline
from .synth import SynthSpec, generate
from .timeseries import DIAGNOSES

log = logging.getLogger("ehrprep")

EXIT_OK, EXIT_VALIDATION, EXIT_DATA = 0, 1, 2
WIZARD_STAGES = ("Extraction", "Grouping", "Summaries/Selection", "Cleaning", "Time-series", "Output", "Model",
                 "Evaluate")
STAGE_KEYS = {
    "Extraction": ("meta", "task", "features"),
    "Grouping": ("grouping",),
    "Cleaning": ("cleaning",),
    "Time-series": ("timeseries",),
    "Output": ("output",),
    "Model": ("model",),
    "Evaluate": ("evaluate",),
}
SUMMARY_PREVIEW = 15


class ArgumentError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ehrprep", description="Cohort extraction and preprocessing for MIMIC-IV-shaped tables.")
    parser.add_argument("--version", action="version", version=f"ehrprep {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=False):
        p.add_argument("--input", required=True, help="directory holding the input tables")
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--config", required=config_required, help="config / provenance file")
        p.add_argument("--seed", type=_seed, help="override meta.seed")
        p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (default 1)")

    p = sub.add_parser("extract", help="run the pipeline non-interactively (defaults if no --config)")
    common(p)
    p = sub.add_parser("replay", help="re-run a recorded provenance.cfg")
    common(p, config_required=True)
    p = sub.add_parser("wizard", help="answer each stage interactively, then run")
    common(p)
    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="file with synth.* keys")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--threads", type=_positive_int, default=1, help="accepted for symmetry; generation is serial")
    p.add_argument("--patients", type=_positive_int, help="number of patients (default 1000)")
    p.add_argument("--corrupt-fraction", type=float, help="share of rows made deliberately inconsistent")
    p = sub.add_parser("evaluate", help="metrics and fairness for an existing predictions file")
    p.add_argument("--input", required=True, help="CSV with sample_id, label, score")
    p.add_argument("--output", required=True, help="directory for the reports")
    p.add_argument("--demographics", help="CSV joinable on sample_id with gender, ethnicity, age")
    p.add_argument("--config", help="config supplying evaluate.threshold and evaluate.calibration_bins")
    p.add_argument("--seed", type=_seed, help="unused; accepted for symmetry")
    p.add_argument("--threads", type=_positive_int, default=1, help="unused; accepted for symmetry")
    p.add_argument("--threshold", type=float)
    p.add_argument("--bins", type=_positive_int)
    return parser


def _load_config(args, required: bool) -> Config:
    if args.config:
        config = Config.load(args.config)
    elif required:
        raise ConfigError("--config is required")
    else:
        config = Config.defaults()
    if args.seed is not None:
        config = config.with_values(meta__seed=str(args.seed))
    return config


def cmd_run(args) -> int:
    config = _load_config(args, required=args.command == "replay")
    Pipeline(config, args.input, args.output, args.threads).run()
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.config:
        try:
            spec = SynthSpec.from_config(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.patients is not None:
        updates["n_patients"] = args.patients
    if args.corrupt_fraction is not None:
        updates["corrupt_fraction"] = args.corrupt_fraction
    if updates:
        spec = SynthSpec(**{**spec.__dict__, **updates})
    paths = generate(spec, args.output)
    (Path(args.output) / "synth.cfg").write_text(spec.to_config(), encoding="utf-8")
    print(f"wrote {len(paths)} tables for {spec.n_patients} patients to {args.output}")
    return EXIT_OK


def read_predictions(path, rejected: list) -> list[tuple[str, int, float]]:
    rows = []
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with handle:
        reader = csv.DictReader(handle)
        missing = {"sample_id", "label", "score"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
        for n, row in enumerate(reader, 2):
            try:
                label = int(row["label"])
                score = float(row["score"])
            except (TypeError, ValueError):
                rejected.append(f"line {n}: unparseable label/score {row['label']!r}/{row['score']!r}")
                continue
            if label not in (0, 1):
                rejected.append(f"line {n}: label {label} is not 0 or 1")
            elif not 0.0 <= score <= 1.0:
                rejected.append(f"line {n}: score {score} outside [0, 1]")
            else:
                rows.append((row["sample_id"], label, score))
    return rows


def cmd_evaluate(args) -> int:
    threshold, bins = 0.5, 10
    if args.config:
        config = Config.load(args.config)
        threshold, bins = config.get_float("evaluate.threshold"), config.get_int("evaluate.calibration_bins")
    if args.threshold is not None:
        if not 0.0 <= args.threshold <= 1.0:
            raise ConfigError(f"--threshold must lie in [0, 1], got {args.threshold}")
        threshold = args.threshold
    if args.bins is not None:
        bins = args.bins
    rejected: list[str] = []
    rows = read_predictions(args.input, rejected)
    for msg in rejected:
        print(f"rejected {msg}", file=sys.stderr)
    if not rows:
        raise DataError(f"{args.input}: no valid prediction rows")
    ids = [r[0] for r in rows]
    labels = [r[1] for r in rows]
    scores = [r[2] for r in rows]
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", evaluate(labels, scores, threshold, bins))
    if not args.demographics:
        print("warning: no demographics file; fairness report skipped", file=sys.stderr)
        return EXIT_OK
    try:
        with open(args.demographics, encoding="utf-8", newline="") as handle:
            demo = {r["sample_id"]: r for r in csv.DictReader(handle)}
    except OSError as exc:
        raise DataError(f"cannot read {args.demographics}: {exc}") from None
    except KeyError:
        raise DataError(f"{args.demographics}: no sample_id column") from None
    misses = [i for i in ids if i not in demo]
    if misses:
        raise DataError(f"{len(misses)} sample id(s) missing from {args.demographics}: {', '.join(misses[:50])}")
    groups = {}
    for attr in ("gender", "ethnicity", "age"):
        if any(attr not in demo[i] for i in ids[:1]):
            continue
        groups[attr] = [age_band(int(demo[i][attr])) if attr == "age" else demo[i][attr] for i in ids]
    report = fairness(labels, scores, threshold, groups)
    (out / "fairness.csv").write_text(render_fairness_report(report), encoding="utf-8")
    (out / "fairness_gaps.csv").write_text(render_fairness_gaps(report), encoding="utf-8")
    print(f"wrote reports to {out}")
    return EXIT_OK


# wizard

@dataclass
class WizardState:
    stage: str = WIZARD_STAGES[0]
    answers: list = field(default_factory=list)

    def advance(self, stage: str) -> None:
        if WIZARD_STAGES.index(stage) < WIZARD_STAGES.index(self.stage):
            raise RuntimeError(f"wizard cannot go back from {self.stage} to {stage}")
        self.stage = stage

    def record(self, dotted: str, value: str) -> None:
        self.answers.append((dotted, value))


class Wizard:
    def __init__(self, input_dir, output_dir, threads: int = 1, seed: Optional[int] = None,
                 ask: Callable[[str], str] = input, say: Callable[[str], None] = print,
                 base: Optional[Config] = None):
        self.input_dir, self.output_dir, self.threads = input_dir, output_dir, threads
        self.ask, self.say = ask, say
        self.base = base or Config.defaults()
        if seed is not None:
            self.base = self.base.with_values(meta__seed=str(seed))
        self.state = WizardState()

    def prompt(self, dotted: str, default: Optional[str] = None) -> str:
        key = KEY_INDEX[dotted]
        default = self.base.values.get(dotted, key.default) if default is None else default
        while True:
            raw = self.ask(f"{dotted} ({key.help}) [{default}]: ").strip()
            try:
                value = key.check(raw or default)
            except ConfigError as exc:
                self.say(f"  invalid: {exc}")
                continue
            self.state.record(dotted, value)
            return value

    def _stage(self, name: str, kind: str):
        self.state.advance(name)
        self.say(f"== {name} ==")
        for key in KEYS:
            if key.stage not in STAGE_KEYS[name] or key.dotted == "meta.tool_version":
                continue
            if key.name in TASK_SPECIFIC and TASK_SPECIFIC[key.name] != kind:
                continue
            if key.dotted == "task.window_anchor":
                self.state.record(key.dotted, ANCHORS[kind])
                self.say(f"task.window_anchor = {ANCHORS[kind]} (fixed by task.kind)")
                continue
            value = self.prompt(key.dotted)
            if key.dotted == "task.kind":
                kind = value
            if key.dotted in ("model.enabled", "evaluate.enabled") and value == "false":
                break
        return kind

    def _config(self) -> Config:
        pairs = dict(self.state.answers)
        pairs.setdefault("meta.tool_version", __version__)
        for key in KEYS:
            if key.dotted not in pairs and key.dotted in self.base.values and \
                    not (key.name in TASK_SPECIFIC and TASK_SPECIFIC[key.name] != pairs.get("task.kind")):
                pairs[key.dotted] = self.base.values[key.dotted]
        return Config.from_pairs(pairs.items(), self.base.base_dir)

    def _checked_stage(self, name: str, kind: str) -> str:
        """Run a stage, repeating it while the answers so far fail cross-key validation."""
        while True:
            kind = self._stage(name, kind)
            try:
                self._config()
                return kind
            except ConfigError as exc:
                self.say(f"  invalid combination: {exc}")

    def run(self) -> Pipeline:
        kind = self._checked_stage("Extraction", self.base["task.kind"])
        self._checked_stage("Grouping", kind)
        pipeline = Pipeline(self._config(), self.input_dir, self.output_dir, self.threads)
        pipeline.extract().summarize()
        self.say(pipeline.cohort_report.to_text().rstrip())

        self.state.advance("Summaries/Selection")
        self.say("== Summaries/Selection ==")
        for fam in DYNAMIC + (DIAGNOSES,):
            if fam not in pipeline.families:
                continue
            rows = pipeline.summaries.get(fam, [])
            self.say(f"{fam}: {len(rows)} codes (code, mean frequency per sample, missing fraction, samples present)")
            for r in rows[:SUMMARY_PREVIEW]:
                self.say(f"  {r.code:<24} {r.mean_frequency_per_admission:10.3f} {r.missing_fraction:7.3f} "
                         f"{r.n_admissions_present:6d}")
            if len(rows) > SUMMARY_PREVIEW:
                self.say(f"  ... {len(rows) - SUMMARY_PREVIEW} more in summaries/{fam}_summary.csv")
            while True:
                value = self.prompt(f"selection.{fam}", "all")
                if not value.startswith("@"):
                    break
                # record the file's codes inline so the provenance record is self-contained
                try:
                    codes = read_keep_list(Path(value[1:]))
                except OSError as exc:
                    self.say(f"  invalid: {exc}")
                    continue
                self.state.answers[-1] = (f"selection.{fam}", ",".join(codes))
                break

        for stage in ("Cleaning", "Time-series", "Output", "Model", "Evaluate"):
            if stage == "Evaluate" and dict(self.state.answers).get("model.enabled") == "false":
                self.state.record("evaluate.enabled", "false")
                continue
            self._checked_stage(stage, kind)
        config = self._config()
        pipeline.config = config
        pipeline.select().clean().regularize().write_outputs().model().evaluate().write_run_report()
        self.say(f"wrote {self.output_dir} (replay with --config {Path(self.output_dir) / 'provenance.cfg'})")
        return pipeline


def cmd_wizard(args) -> int:
    base = Config.load(args.config) if args.config else None
    Wizard(args.input, args.output, args.threads, args.seed, base=base).run()
    return EXIT_OK


COMMANDS = {"extract": cmd_run, "replay": cmd_run, "wizard": cmd_wizard, "synth": cmd_synth,
            "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EOFError:
        print("validation error: input ended before the wizard finished", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
