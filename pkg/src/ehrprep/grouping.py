"""Clinical code normalization: ICD-9 to ICD-10, ICD-10 roots, and NDC drug grouping.

Lookups that miss return ``None`` and bump a counter in the optional
``tally`` argument; they never raise.
"""
from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

ICD_TIE_RULE = "lexicographic_min"

_NDC_PATTERN = re.compile(r"^(\d{4,5})-(\d{3,4})-(\d{1,2})$")
_NDC_LAYOUTS = {(4, 4, 2), (5, 3, 2), (5, 4, 1), (5, 4, 2)}
_ICD9_SHAPE = re.compile(r"^[0-9EV][0-9]{2,4}$")
_ICD10_SHAPE = re.compile(r"^[A-Z][0-9][0-9A-Z]{1,5}$")


def _data_path(name: str):
    return resources.files("ehrprep") / "data" / name


@dataclass
class IcdMapTable:
    entries: dict[str, str] = field(default_factory=dict)
    ties_resolved: int = 0

    @classmethod
    def load(cls, path=None) -> "IcdMapTable":
        """Read a two-column (icd9, icd10) file; one-to-many rows keep the smallest target."""
        source = _data_path("icd9_to_icd10.csv") if path is None else Path(path)
        table = cls()
        with source.open(encoding="utf-8", newline="") as handle:
            for row in csv.DictReader(handle):
                icd9 = row["icd9"].strip().replace(".", "").upper()
                icd10 = row["icd10"].strip().replace(".", "").upper()
                if not _ICD9_SHAPE.match(icd9) or not _ICD10_SHAPE.match(icd10):
                    raise ValueError(f"malformed mapping row {icd9!r} -> {icd10!r}")
                current = table.entries.get(icd9)
                if current is None:
                    table.entries[icd9] = icd10
                elif current != icd10:
                    table.ties_resolved += 1
                    table.entries[icd9] = min(current, icd10)
        return table


@dataclass
class NdcDirectory:
    entries: dict[tuple[str, str], str] = field(default_factory=dict)

    @classmethod
    def load(cls, path=None) -> "NdcDirectory":
        source = _data_path("ndc_directory.csv") if path is None else Path(path)
        directory = cls()
        with source.open(encoding="utf-8", newline="") as handle:
            for row in csv.DictReader(handle):
                labeler = row["labeler"].strip().zfill(5)
                product = row["product"].strip().zfill(4)
                if not (labeler.isdigit() and product.isdigit() and len(labeler) == 5 and len(product) == 4):
                    raise ValueError(f"malformed directory key {labeler!r}/{product!r}")
                directory.entries[(labeler, product)] = row["nonproprietary_name"].strip()
        return directory


def convert_icd9_to_icd10(code: str, icd_map: IcdMapTable, tally: Optional[Counter] = None) -> Optional[str]:
    key = code.strip().replace(".", "").upper()
    target = icd_map.entries.get(key)
    if target is None and tally is not None:
        tally["icd9_unmapped"] += 1
    return target


def to_icd10(code: str, version: int, icd_map: IcdMapTable, tally: Optional[Counter] = None) -> Optional[str]:
    """ICD-10 codes pass through unchanged; ICD-9 codes go through the map."""
    if version == 10:
        return code
    return convert_icd9_to_icd10(code, icd_map, tally)


def icd10_root(code: str, tally: Optional[Counter] = None) -> Optional[str]:
    code = code.strip().replace(".", "")
    if len(code) < 3:
        if tally is not None:
            tally["icd10_malformed"] += 1
        return None
    return code[:3].upper()


def normalize_ndc_11(raw: str, tally: Optional[Counter] = None) -> Optional[str]:
    """Zero-pad a hyphenated NDC to the 5-4-2 layout and drop the hyphens.

    Accepted input layouts are 4-4-2, 5-3-2 and 5-4-1 (plus already
    padded 5-4-2), or a bare 11-digit string. Anything else is malformed
    and yields ``None``.
    """
    raw = raw.strip()
    if len(raw) == 11 and raw.isdigit():
        return raw
    match = _NDC_PATTERN.match(raw)
    if match is None or tuple(map(len, match.groups())) not in _NDC_LAYOUTS:
        if tally is not None:
            tally["ndc_malformed"] += 1
        return None
    labeler, product, package = match.groups()
    return labeler.zfill(5) + product.zfill(4) + package.zfill(2)


def map_ndc_to_nonproprietary(ndc11: str, directory: NdcDirectory, tally: Optional[Counter] = None) -> Optional[str]:
    if len(ndc11) != 11 or not ndc11.isdigit():
        raise ValueError(f"expected an 11-digit NDC, got {ndc11!r}")
    name = directory.entries.get((ndc11[:5], ndc11[5:9]))
    if name is None and tally is not None:
        tally["ndc_unmapped"] += 1
    return name


def diagnosis_roots(diagnoses, icd_map: IcdMapTable, tally: Optional[Counter] = None) -> dict[int, set[str]]:
    """Map each hadm_id to the set of ICD-10 roots among its diagnoses."""
    roots: dict[int, set[str]] = {}
    for dx in diagnoses:
        code = to_icd10(dx.icd_code, dx.icd_version, icd_map, tally)
        if code is None:
            continue
        root = icd10_root(code, tally)
        if root is not None:
            roots.setdefault(dx.hadm_id, set()).add(root)
    return roots


def medication_group(row, directory: NdcDirectory, tally: Optional[Counter] = None) -> str:
    """Grouped drug identity: the non-proprietary name when the NDC resolves, else the raw name."""
    if row.ndc:
        ndc11 = normalize_ndc_11(row.ndc, tally)
        if ndc11 is not None:
            name = map_ndc_to_nonproprietary(ndc11, directory, tally)
            if name is not None:
                return name
    return row.drug_name.strip().lower()
