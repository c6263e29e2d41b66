"""Pipeline configuration and the provenance record.

One line-oriented format serves both roles::

    # comment
    task.kind = Mortality
    timeseries.resolution_hours = 2

A run writes the fully resolved record to ``provenance.cfg``; feeding that
file back as ``--config`` replays the run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from .errors import ConfigError

DATASET_VERSION = "MIMIC-IV v1.0"
BUNDLED = "bundled"


# value checkers: each takes the raw text and returns the canonical text or raises ConfigError

def _choice(*options):
    def check(text):
        if text not in options:
            raise ConfigError(f"expected one of {', '.join(options)}; got {text!r}")
        return text
    check.options = options
    return check


def _int_range(lo=None, hi=None):
    def check(text):
        try:
            value = int(text)
        except ValueError:
            raise ConfigError(f"expected an integer, got {text!r}") from None
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            bounds = f"between {lo} and {hi}" if hi is not None else f">= {lo}"
            raise ConfigError(f"value must be {bounds}, got {value}")
        return str(value)
    return check


def _float_range(lo, hi, hi_open=False, lo_open=False):
    def check(text):
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"expected a number, got {text!r}") from None
        if not math.isfinite(value) or value < lo or (lo_open and value == lo) or value > hi or (hi_open and value == hi):
            raise ConfigError(f"value must lie in {'(' if lo_open else '['}{lo}, {hi}{')' if hi_open else ']'}, got {text}")
        return repr(value)
    return check


def _bool(text):
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return "true"
    if lowered in ("false", "no", "0"):
        return "false"
    raise ConfigError(f"expected true or false, got {text!r}")


def _root_or_none(text):
    if text.lower() == "none":
        return "none"
    text = text.upper()
    if len(text) != 3 or not text[0].isalpha() or not text[1:].isalnum():
        raise ConfigError(f"expected a 3-character ICD-10 root or none, got {text!r}")
    return text


def _families(text):
    allowed = ("labs", "vitals", "medications", "procedures", "diagnoses")
    parts = [p.strip() for p in text.split(",") if p.strip()]
    for p in parts:
        if p not in allowed:
            raise ConfigError(f"unknown feature family {p!r}; expected a subset of {', '.join(allowed)}")
    return ",".join(f for f in allowed if f in parts)


def _selection(text):
    if text == "all" or text.startswith("@"):
        return text
    return ",".join(c.strip() for c in text.split(",") if c.strip())


def _resource(text):
    return text


def _exact(expected):
    def check(text):
        if text != expected:
            raise ConfigError(f"expected {expected!r}, got {text!r}")
        return text
    return check


def _version(text):
    if text != __version__:
        raise ConfigError(f"record was written by ehrprep {text}; this is ehrprep {__version__}. "
                          f"Replay it with the matching version")
    return text


@dataclass(frozen=True)
class Key:
    stage: str
    name: str
    default: str
    check: Callable[[str], str]
    help: str = ""
    required: bool = True

    @property
    def dotted(self) -> str:
        return f"{self.stage}.{self.name}"


KEYS = [
    Key("meta", "tool_version", __version__, _version, "tool version that wrote the record"),
    Key("meta", "dataset_version", DATASET_VERSION, lambda t: t, "source dataset release"),
    Key("meta", "seed", "42", _int_range(0), "seed for folds and oversampling"),
    Key("task", "kind", "Mortality", _choice("Readmission", "Mortality", "LengthOfStay", "Phenotype"),
        "prediction task"),
    Key("task", "setting", "ICU", _choice("ICU", "NonICU"), "sample unit: ICU stay or hospital admission"),
    Key("task", "disease_filter", "N18", _root_or_none, "ICD-10 root the admission must carry, or none"),
    Key("task", "window_hours", "48", _int_range(1), "observation window length in hours"),
    Key("task", "window_anchor", "FirstHours", _choice("FirstHours", "LastHours"),
        "FirstHours for Mortality/LengthOfStay, LastHours for Readmission/Phenotype"),
    Key("task", "gap_days", "30", _int_range(10, 150), "readmission gap in days (10-150)", required=False),
    Key("task", "los_threshold_days", "3", _int_range(1, 10), "length-of-stay threshold in days (1-10)",
        required=False),
    Key("task", "phenotype_target", "I50", _root_or_none, "ICD-10 root predicted at the next admission",
        required=False),
    Key("task", "readmission_boundary", "inclusive", _exact("inclusive"), "gap equal to gap_days counts"),
    Key("features", "families", "diagnoses,labs,vitals", _families, "feature families to extract"),
    Key("grouping", "icd_map", BUNDLED, _resource, "ICD-9 to ICD-10 map: bundled or a CSV path"),
    Key("grouping", "ndc_directory", BUNDLED, _resource, "NDC product directory: bundled or a CSV path"),
    Key("grouping", "icd_tie_rule", "lexicographic_min", _exact("lexicographic_min"),
        "one-to-many ICD-9 targets resolve to the smallest code"),
    Key("grouping", "unmapped_icd", "drop", _exact("drop"), "unmapped ICD-9 codes are dropped and tallied"),
    Key("selection", "labs", "all", _selection, "all, comma-separated codes, or @file"),
    Key("selection", "vitals", "all", _selection, "all, comma-separated codes, or @file"),
    Key("selection", "medications", "all", _selection, "all, comma-separated codes, or @file"),
    Key("selection", "procedures", "all", _selection, "all, comma-separated codes, or @file"),
    Key("selection", "diagnoses", "all", _selection, "all, comma-separated roots, or @file"),
    Key("cleaning", "unit_rules", BUNDLED, _resource, "unit conversion rules: bundled, none, or a CSV path"),
    Key("cleaning", "outlier_threshold", "2.0", _float_range(0.0, 50.0, hi_open=True),
        "percentile cut at each tail, in [0, 50)"),
    Key("cleaning", "outlier_mode", "Remove", _choice("Remove", "Cap"), "drop or clip out-of-range values"),
    Key("cleaning", "percentile_method", "nearest_rank", _exact("nearest_rank"), "percentile definition"),
    Key("cleaning", "outlier_population", "cohort", _choice("cohort", "window"),
        "events behind summaries and outlier bounds: cohort (whole sample spans) or window"),
    Key("timeseries", "resolution_hours", "2.0", _float_range(0.0, 1e6, lo_open=True), "bin width in hours"),
    Key("timeseries", "aggregator", "mean", _choice("mean", "last", "max"), "within-bin measurement aggregator"),
    Key("timeseries", "imputation", "ForwardFillMean", _choice("ForwardFillMean", "None"), "missing-bin filling"),
    Key("output", "bundle", "true", _bool, "also write bundle.ehrf"),
    Key("model", "enabled", "true", _bool, "train the baseline model"),
    Key("model", "shaping", "Concat", _choice("Concat", "Aggregate"), "how tensors become feature rows"),
    Key("model", "folds", "5", _int_range(2, 100), "cross-validation folds"),
    Key("model", "oversample", "true", _bool, "oversample the minority class in training folds"),
    Key("model", "learning_rate", "0.1", _float_range(0.0, 100.0, lo_open=True), "gradient step size"),
    Key("model", "epochs", "300", _int_range(1), "maximum training epochs"),
    Key("model", "l2", "0.01", _float_range(0.0, 1e6), "L2 penalty"),
    Key("model", "patience", "5", _int_range(1), "early-stopping patience in epochs"),
    Key("model", "validation_fraction", "0.1", _float_range(0.0, 0.5), "held-out share of each training fold"),
    Key("evaluate", "enabled", "true", _bool, "write metrics and fairness reports"),
    Key("evaluate", "threshold", "0.5", _float_range(0.0, 1.0), "decision threshold"),
    Key("evaluate", "calibration_bins", "10", _int_range(1, 1000), "equal-width calibration bins"),
]
KEY_INDEX = {k.dotted: k for k in KEYS}
STAGES = tuple(dict.fromkeys(k.stage for k in KEYS))
TASK_SPECIFIC = {"gap_days": "Readmission", "los_threshold_days": "LengthOfStay", "phenotype_target": "Phenotype"}
ANCHORS = {"Mortality": "FirstHours", "LengthOfStay": "FirstHours", "Readmission": "LastHours",
           "Phenotype": "LastHours"}


def parse_lines(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    """Raw ``(dotted_key, value)`` pairs in file order; syntax errors name the line."""
    pairs = []
    seen = set()
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or "." not in key:
            raise ConfigError(f"{source}:{n}: expected 'stage.key = value', got {stripped!r}")
        if key in seen:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        seen.add(key)
        pairs.append((key, value))
    return pairs


class Config:
    """Validated configuration; values are canonical strings keyed by ``stage.key``."""

    def __init__(self, values: dict[str, str], base_dir: Optional[Path] = None):
        self.values = values
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    # construction

    @classmethod
    def from_pairs(cls, pairs, base_dir=None, fill_defaults: bool = False) -> "Config":
        values = {}
        for dotted, raw in pairs:
            key = KEY_INDEX.get(dotted)
            if key is None:
                raise ConfigError(f"unknown key {dotted!r}")
            try:
                values[dotted] = key.check(raw)
            except ConfigError as exc:
                raise ConfigError(f"{dotted}: {exc}") from None
        kind = values.get("task.kind", "Mortality" if fill_defaults else None)
        for key in KEYS:
            if key.dotted in values:
                continue
            needed = key.required or TASK_SPECIFIC.get(key.name) == kind
            if fill_defaults or not needed:
                if needed:
                    default = ANCHORS[kind] if key.name == "window_anchor" else key.default
                    values[key.dotted] = key.check(default)
                continue
            raise ConfigError(f"missing key {key.dotted!r} (stage {key.stage!r} is incomplete)")
        config = cls(values, base_dir)
        config._cross_check()
        return config

    @classmethod
    def from_text(cls, text: str, base_dir=None, source: str = "<config>") -> "Config":
        return cls.from_pairs(parse_lines(text, source), base_dir)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, path.resolve().parent, str(path))

    @classmethod
    def defaults(cls, **overrides) -> "Config":
        """Defaults reproduce the CKD/ICU/mortality worked example; ``overrides`` use ``stage__key`` names."""
        pairs = [(k.replace("__", "."), str(v)) for k, v in overrides.items()]
        return cls.from_pairs(pairs, fill_defaults=True)

    def _cross_check(self):
        kind = self.values["task.kind"]
        for name, owner in TASK_SPECIFIC.items():
            if f"task.{name}" in self.values and owner != kind:
                raise ConfigError(f"task.{name} applies only to {owner} tasks, not {kind}")
        if self.values["task.window_anchor"] != ANCHORS[kind]:
            raise ConfigError(f"task.window_anchor must be {ANCHORS[kind]} for {kind}")
        if kind == "Phenotype" and self.values["task.phenotype_target"] == "none":
            raise ConfigError("task.phenotype_target must be an ICD-10 root for Phenotype")
        res = float(self.values["timeseries.resolution_hours"])
        window = int(self.values["task.window_hours"])
        seconds = res * 3600
        if seconds != int(seconds) or (window * 3600) % int(seconds):
            raise ConfigError(f"timeseries.resolution_hours {res} must divide task.window_hours {window} "
                              f"in whole seconds")

    # access

    def __getitem__(self, dotted: str) -> str:
        return self.values[dotted]

    def get_int(self, dotted: str) -> int:
        return int(self.values[dotted])

    def get_float(self, dotted: str) -> float:
        return float(self.values[dotted])

    def get_bool(self, dotted: str) -> bool:
        return self.values[dotted] == "true"

    def get_root(self, dotted: str) -> Optional[str]:
        value = self.values.get(dotted, "none")
        return None if value == "none" else value

    def resolve(self, text: str) -> Path:
        path = Path(text)
        return path if path.is_absolute() else (self.base_dir / path)

    def resource(self, dotted: str) -> Optional[Path]:
        """Path for a bundled-or-file resource; ``None`` means the bundled default."""
        value = self.values[dotted]
        if value == BUNDLED:
            return None
        return self.resolve(value)

    def selection(self, family: str) -> Optional[list[str]]:
        """Keep-list for a family; ``None`` keeps every code."""
        from .features import read_keep_list

        value = self.values[f"selection.{family}"]
        if value == "all":
            return None
        if value.startswith("@"):
            path = self.resolve(value[1:])
            try:
                return read_keep_list(path)
            except OSError as exc:
                raise ConfigError(f"selection.{family}: cannot read {path}: {exc}") from None
        return [c for c in value.split(",") if c]

    def with_values(self, **updates) -> "Config":
        values = dict(self.values)
        values.update({k.replace("__", "."): v for k, v in updates.items()})
        return Config.from_pairs(values.items(), self.base_dir)

    # serialization

    def record(self) -> list[tuple[str, str, str]]:
        """Ordered ``(stage, key, value)`` triples; file references are made absolute."""
        out = []
        for key in KEYS:
            if key.dotted not in self.values:
                continue
            value = self.values[key.dotted]
            if key.stage == "selection" and value.startswith("@"):
                value = "@" + str(self.resolve(value[1:]).resolve())
            elif key.check is _resource and value not in (BUNDLED, "none"):
                value = str(self.resolve(value).resolve())
            out.append((key.stage, key.name, value))
        return out

    def to_text(self) -> str:
        lines = ["# ehrprep provenance record; replay with: ehrprep replay --config <this file>"]
        stage = None
        for st, name, value in self.record():
            if st != stage:
                lines.append(f"# {st}")
                stage = st
            lines.append(f"{st}.{name} = {value}")
        return "\n".join(lines) + "\n"
