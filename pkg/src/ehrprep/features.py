"""Per-code feature summaries and keep-list selection."""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("code", "mean_frequency_per_admission", "missing_fraction", "n_admissions_present")


@dataclass(frozen=True)
class SummaryRow:
    code: str
    mean_frequency_per_admission: float
    missing_fraction: float
    n_admissions_present: int


def summarize(events: Iterable[tuple], n_admissions: int) -> list[SummaryRow]:
    """Summarize ``(unit_id, code, value_missing)`` events over a cohort of ``n_admissions`` units.

    Rows come back sorted by descending mean frequency, then by code.
    """
    if n_admissions <= 0:
        log.warning("empty cohort: feature summary is empty")
        return []
    occurrences, missing = Counter(), Counter()
    present: dict[str, set] = {}
    for unit, code, value_missing in events:
        occurrences[code] += 1
        if value_missing:
            missing[code] += 1
        present.setdefault(code, set()).add(unit)
    rows = [
        SummaryRow(code, occurrences[code] / n_admissions, missing[code] / occurrences[code], len(present[code]))
        for code in occurrences
    ]
    rows.sort(key=lambda r: (-r.mean_frequency_per_admission, r.code))
    return rows


def write_summary(path, rows: list[SummaryRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([r.code, repr(r.mean_frequency_per_admission), repr(r.missing_fraction), r.n_admissions_present])


def read_summary(path) -> list[SummaryRow]:
    with open(path, encoding="utf-8", newline="") as handle:
        return [
            SummaryRow(r["code"], float(r["mean_frequency_per_admission"]), float(r["missing_fraction"]),
                       int(r["n_admissions_present"]))
            for r in csv.DictReader(handle)
        ]


def read_keep_list(path) -> list[str]:
    """One code per line; blank lines and ``#`` comments are ignored."""
    codes = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            codes.append(line)
    return codes


def apply_selection(events: list, keep_list: Optional[Iterable[str]], code_of: Callable = lambda e: e[1],
                    warnings: Optional[list] = None) -> list:
    """Restrict ``events`` to codes in ``keep_list``; ``None`` keeps everything."""
    if keep_list is None:
        return list(events)
    keep = {str(c) for c in keep_list}
    seen = set()
    out = []
    for event in events:
        code = str(code_of(event))
        if code in keep:
            out.append(event)
            seen.add(code)
    for code in sorted(keep - seen):
        msg = f"selected code {code!r} does not occur in the cohort"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
    return out
