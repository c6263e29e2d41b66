"""Discrimination, calibration and group-fairness metrics.

Undefined quantities (zero denominators, single-class AUROC) are ``None``
in memory and ``NaN`` in rendered files.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

FAIRNESS_COLUMNS = ("sensitive_attribute", "group", "TPR", "TNR", "FPR", "FNR", "PR")
RATES = ("TPR", "TNR", "FPR", "FNR", "PR")
NOT_DEFINED = "NaN"


def _ratio(num, den) -> Optional[float]:
    return num / den if den else None


@dataclass
class MetricReport:
    auroc: Optional[float]
    auprc: Optional[float]
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    npv: Optional[float]
    ece: float
    mce: float
    threshold: float
    n: int = 0
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def rows(self):
        for name in ("auroc", "auprc", "accuracy", "precision", "recall", "npv", "ece", "mce", "threshold"):
            yield name, getattr(self, name)
        for name in ("n", "tp", "fp", "tn", "fn"):
            yield name, getattr(self, name)


def _validate(labels, scores):
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be 1-D and equally long")
    if len(y) == 0:
        raise ValueError("empty input")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    if not ((s >= 0) & (s <= 1)).all():
        raise ValueError("scores must lie in [0, 1]")
    return y.astype(np.int64), s


def confusion_counts(labels, predicted):
    y = np.asarray(labels).astype(bool)
    p = np.asarray(predicted).astype(bool)
    return int((y & p).sum()), int((~y & p).sum()), int((~y & ~p).sum()), int((y & ~p).sum())


def confusion_metrics(labels, scores, threshold: float = 0.5) -> dict:
    y, s = _validate(labels, scores)
    tp, fp, tn, fn = confusion_counts(y, s >= threshold)
    return {
        "accuracy": (tp + tn) / len(y),
        "precision": _ratio(tp, tp + fp),
        "recall": _ratio(tp, tp + fn),
        "npv": _ratio(tn, tn + fn),
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
    }


def auroc(labels, scores) -> Optional[float]:
    """Mann-Whitney AUROC from average ranks; ties between classes count one half."""
    y, s = _validate(labels, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    # average 1-based rank of each distinct score value
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    rank_sum = avg_rank[inverse][y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(labels, scores) -> Optional[float]:
    """Average precision: sum over distinct score thresholds of (recall step) x precision."""
    y, s = _validate(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        return None
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last_of_value = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_value]
    fp = np.cumsum(1 - y_sorted)[last_of_value]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def calibration(labels, scores, n_bins: int = 10) -> tuple[float, float]:
    """Expected and maximum calibration error over equal-width probability bins.

    Bin sums are accumulated exactly over the shortest decimal form of each
    score, so hand-checkable fixtures (scores like 0.2 and 0.8) give their
    decimal answers instead of binary round-off neighbours.
    """
    y, s = _validate(labels, scores)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    idx = np.minimum((s * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    diff = [Fraction(0)] * n_bins
    for k, score, label in zip(idx.tolist(), s.tolist(), y.tolist()):
        diff[k] += Fraction(repr(score)) - label
    gaps = [abs(diff[k]) / int(counts[k]) for k in range(n_bins) if counts[k]]
    ece = sum(abs(diff[k]) for k in range(n_bins)) / len(y)
    return float(ece), float(max(gaps)) if gaps else 0.0


def evaluate(labels, scores, threshold: float = 0.5, n_bins: int = 10) -> MetricReport:
    cm = confusion_metrics(labels, scores, threshold)
    ece, mce = calibration(labels, scores, n_bins)
    return MetricReport(
        auroc=auroc(labels, scores), auprc=auprc(labels, scores), accuracy=cm["accuracy"],
        precision=cm["precision"], recall=cm["recall"], npv=cm["npv"], ece=ece, mce=mce,
        threshold=threshold, n=len(labels), tp=cm["tp"], fp=cm["fp"], tn=cm["tn"], fn=cm["fn"],
    )


def _render(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return NOT_DEFINED
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_metrics(path, report: MetricReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in report.rows():
            writer.writerow([name, _render(value)])


def age_band(age: int) -> str:
    """Decade band; the first band starts at the adult cutoff and the last closes at 100."""
    if age < 30:
        return "18-30"
    lo = min(age // 10 * 10, 90)
    return f"{lo}-{lo + 10}"


@dataclass
class GroupRates:
    attribute: str
    group: str
    n: int
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def rates(self) -> dict:
        return {
            "TPR": _ratio(self.tp, self.tp + self.fn),
            "TNR": _ratio(self.tn, self.tn + self.fp),
            "FPR": _ratio(self.fp, self.fp + self.tn),
            "FNR": _ratio(self.fn, self.tp + self.fn),
            "PR": _ratio(self.tp + self.fp, self.n),
        }


@dataclass
class FairnessReport:
    groups: list[GroupRates] = field(default_factory=list)
    gaps: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def rates_for(self, attribute: str) -> dict:
        return {g.group: g.rates for g in self.groups if g.attribute == attribute}


def _gap(values) -> float:
    defined = [v for v in values if v is not None]
    return max(defined) - min(defined) if defined else 0.0


def fairness(labels, scores, threshold: float, groups: Mapping[str, Sequence[str]]) -> FairnessReport:
    """Per-group confusion rates and max-minus-min gaps for each sensitive attribute.

    ``groups`` maps an attribute name to one group label per sample. Gaps use
    only groups where the rate is defined.
    """
    y, s = _validate(labels, scores)
    predicted = s >= threshold
    report = FairnessReport()
    for attribute, assignment in groups.items():
        assignment = np.asarray([str(g) for g in assignment])
        if len(assignment) != len(y):
            raise ValueError(f"attribute {attribute!r}: {len(assignment)} assignments for {len(y)} samples")
        names = sorted(set(assignment.tolist()))
        rows = []
        for name in names:
            mask = assignment == name
            tp, fp, tn, fn = confusion_counts(y[mask], predicted[mask])
            rows.append(GroupRates(attribute, name, int(mask.sum()), tp, fp, tn, fn))
        report.groups.extend(rows)
        if len(names) < 2:
            msg = f"attribute {attribute!r} has a single group; gaps are 0"
            log.warning(msg)
            report.warnings.append(msg)
        tpr_gap = _gap(r.rates["TPR"] for r in rows)
        fpr_gap = _gap(r.rates["FPR"] for r in rows)
        report.gaps[attribute] = {
            "demographic_parity": _gap(r.rates["PR"] for r in rows),
            "equalized_opportunity": tpr_gap,
            "equalized_odds": max(tpr_gap, fpr_gap),
        }
    return report


def render_fairness_report(report: FairnessReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FAIRNESS_COLUMNS)
    for g in report.groups:
        rates = g.rates
        writer.writerow([g.attribute, g.group] + [
            NOT_DEFINED if rates[r] is None else f"{rates[r]:.4f}" for r in RATES])
    return buf.getvalue()


def parse_fairness_report(text: str) -> dict:
    """Rendered fairness table back to ``{attribute: {group: {rate: value or None}}}``."""
    out: dict = {}
    for row in csv.DictReader(io.StringIO(text)):
        out.setdefault(row["sensitive_attribute"], {})[row["group"]] = {
            r: None if row[r] == NOT_DEFINED else float(row[r]) for r in RATES}
    return out


def render_fairness_gaps(report: FairnessReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sensitive_attribute", "demographic_parity", "equalized_opportunity", "equalized_odds"])
    for attribute, gaps in report.gaps.items():
        writer.writerow([attribute] + [f"{gaps[k]:.4f}" for k in
                                       ("demographic_parity", "equalized_opportunity", "equalized_odds")])
    return buf.getvalue()
