"""Unit harmonization and percentile-based outlier handling."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError

PERCENTILE_METHOD = "nearest_rank"


class OutlierMode(str, Enum):
    REMOVE = "Remove"
    CAP = "Cap"


@dataclass(frozen=True)
class OutlierPolicy:
    threshold_percentile: float
    mode: OutlierMode = OutlierMode.REMOVE

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", OutlierMode(self.mode))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        t = self.threshold_percentile
        if not (math.isfinite(t) and 0 <= t < 50):
            raise ConfigError(f"outlier threshold must lie in [0, 50), got {t}")


@dataclass
class UnitRule:
    item_id: int
    canonical_unit: str
    conversions: dict[str, tuple[float, float]] = field(default_factory=dict)

    def add(self, source_unit: str, factor: float, offset: float = 0.0) -> None:
        if not math.isfinite(factor) or factor == 0 or not math.isfinite(offset):
            raise ValueError(f"item {self.item_id}: bad conversion factor {factor}/{offset}")
        self.conversions[source_unit] = (factor, offset)


def load_unit_rules(path=None) -> dict[int, UnitRule]:
    """Read (item_id, canonical_unit, source_unit, factor, offset) rows; ``None`` loads the bundled table."""
    source = resources.files("ehrprep") / "data" / "unit_rules.csv" if path is None else Path(path)
    rules: dict[int, UnitRule] = {}
    with source.open(encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            item = int(row["item_id"])
            rule = rules.setdefault(item, UnitRule(item, row["canonical_unit"].strip()))
            if rule.canonical_unit != row["canonical_unit"].strip():
                raise ValueError(f"item {item}: conflicting canonical units")
            rule.add(row["source_unit"].strip(), float(row["factor"]), float(row.get("offset") or 0.0))
    return rules


def convert_value(value: float, unit: Optional[str], rule: UnitRule) -> Optional[float]:
    """Value in the rule's canonical unit, or ``None`` for an unknown source unit."""
    unit = (unit or "").strip()
    if unit == rule.canonical_unit:
        return value
    conversion = rule.conversions.get(unit)
    if conversion is None:
        return None
    factor, offset = conversion
    return value * factor + offset


def harmonize_units(measurements, rules: dict[int, UnitRule], tally: Optional[Counter] = None) -> list:
    """Convert measurement rows to canonical units.

    Items without a rule pass through untouched. Rows without a value are kept
    (they still count as recorded events). Rows in an unknown unit are dropped.
    """
    out = []
    for row in measurements:
        rule = rules.get(row.item_id)
        if rule is None or row.value is None:
            out.append(row)
            continue
        value = convert_value(row.value, row.unit, rule)
        if value is None:
            if tally is not None:
                tally["unknown_unit"] += 1
            continue
        if value != row.value or row.unit != rule.canonical_unit:
            if tally is not None:
                tally["unit_converted"] += 1
            row = replace(row, value=value, unit=rule.canonical_unit)
        out.append(row)
    return out


def nearest_rank_index(p: float, n: int) -> int:
    """0-based index of the nearest-rank ``p``-th percentile in a sorted length-``n`` sequence."""
    rank = math.ceil(Fraction(p) * n / 100)
    return min(max(rank, 1), n) - 1


def percentile_bounds(values, threshold: float) -> tuple[float, float]:
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    n = len(ordered)
    if n == 0:
        raise ValueError("percentile of an empty sequence")
    return float(ordered[nearest_rank_index(threshold, n)]), float(ordered[nearest_rank_index(100 - threshold, n)])


def remove_outliers(values, policy: OutlierPolicy) -> tuple[np.ndarray, int]:
    """Trim or cap ``values`` outside the [t, 100 - t] nearest-rank percentiles.

    Returns the processed array and the number of values removed or capped.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0 or policy.threshold_percentile == 0:
        return arr.copy(), 0
    low, high = percentile_bounds(arr, policy.threshold_percentile)
    outside = (arr < low) | (arr > high)
    touched = int(outside.sum())
    if policy.mode is OutlierMode.REMOVE:
        return arr[~outside], touched
    return np.clip(arr, low, high), touched


def clean_measurements(rows, policy: OutlierPolicy, feature_key, tally: Optional[Counter] = None) -> list:
    """Apply ``remove_outliers`` per feature over the whole cohort, preserving row order.

    ``feature_key(row)`` names the feature distribution a row belongs to. Rows
    without a value are untouched.
    """
    by_feature: dict = {}
    for i, row in enumerate(rows):
        if row.value is not None:
            by_feature.setdefault(feature_key(row), []).append(i)
    drop = set()
    replaced = {}
    for key in sorted(by_feature, key=repr):
        idx = by_feature[key]
        values = np.array([rows[i].value for i in idx], dtype=np.float64)
        if policy.threshold_percentile == 0:
            continue
        low, high = percentile_bounds(values, policy.threshold_percentile)
        for i, v in zip(idx, values):
            if v < low or v > high:
                if policy.mode is OutlierMode.REMOVE:
                    drop.add(i)
                else:
                    replaced[i] = low if v < low else high
    if tally is not None:
        tally["outliers_removed" if policy.mode is OutlierMode.REMOVE else "outliers_capped"] += len(drop) + len(replaced)
    out = []
    for i, row in enumerate(rows):
        if i in drop:
            continue
        if i in replaced:
            row = replace(row, value=replaced[i])
        out.append(row)
    return out
