"""Persistence of sample tensors, the cohort manifest and the bundled cohort file.

Layout under the output directory::

    <sample_id>/dynamic.csv     n_bins rows x one column per dynamic feature
    <sample_id>/presence.csv    same shape, 1 where the feature was recorded in the bin
    <sample_id>/static.csv      one row of diagnosis-root indicators
    <sample_id>/demo.csv        one row: age, gender, ethnicity, insurance codes
    cohort_manifest.csv
    bundle.ehrf

Floats are written with ``repr`` (shortest round-trip form) so files are
byte-stable and re-read exactly.
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .errors import DataError
from .timeseries import SampleTensor
from .timeutil import format_timestamp

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "ehrf"
BUNDLE_VERSION = 1
MANIFEST_COLUMNS = ("sample_id", "subject_id", "hadm_id", "stay_id", "label", "window_start", "window_end",
                    "age", "gender", "ethnicity", "insurance")


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows, fmt=_fmt) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        if not len(header):
            return
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _read_rows(path: Path, dtype):
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header)).astype(dtype)


def write_sample(out_dir, tensor: SampleTensor, registry) -> Path:
    target = Path(out_dir) / str(tensor.sample_id)
    try:
        target.mkdir(parents=True, exist_ok=True)
        _write_rows(target / "dynamic.csv", registry.dynamic_names, tensor.dynamic)
        _write_rows(target / "presence.csv", registry.dynamic_names, tensor.presence, fmt=lambda v: str(int(v)))
        _write_rows(target / "static.csv", registry.static, [tensor.static], fmt=lambda v: str(int(v)))
        _write_rows(target / "demo.csv", registry.demographic_names, [tensor.demographic])
    except OSError as exc:
        raise DataError(f"sample {tensor.sample_id}: cannot write {target}: {exc}") from exc
    return target


def read_sample(out_dir, sample_id) -> SampleTensor:
    base = Path(out_dir) / str(sample_id)
    _, dynamic = _read_rows(base / "dynamic.csv", np.float64)
    _, presence = _read_rows(base / "presence.csv", np.uint8)
    _, static = _read_rows(base / "static.csv", np.uint8)
    _, demo = _read_rows(base / "demo.csv", np.float64)
    static = static[0] if len(static) else np.zeros(0, dtype=np.uint8)
    return SampleTensor(int(sample_id), dynamic, presence, static, demo[0])


def write_manifest(path, samples) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for s in samples:
            writer.writerow([s.sample_id, s.subject_id, s.hadm_id, "" if s.stay_id is None else s.stay_id, s.label,
                             format_timestamp(s.window_start), format_timestamp(s.window_end), s.age, s.gender,
                             s.ethnicity, s.insurance])


def read_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def write_bundle(path, tensors, samples, registry) -> None:
    """Write the whole cohort as one JSON document keyed by sample id."""
    if not tensors:
        log.warning("writing an empty bundle")
    by_id = {s.sample_id: s for s in samples}
    entries = {}
    for t in tensors:
        key = str(t.sample_id)
        if key in entries:
            raise DataError(f"duplicate sample id {key} in bundle")
        s = by_id[t.sample_id]
        entries[key] = {
            "label": int(s.label),
            "window_start": format_timestamp(s.window_start),
            "window_end": format_timestamp(s.window_end),
            "dynamic": t.dynamic.tolist(),
            "presence": t.presence.astype(int).tolist(),
            "static": t.static.astype(int).tolist(),
            "demographic": t.demographic.tolist(),
        }
    doc = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "registry": {
            "dynamic": registry.dynamic_names,
            "static": list(registry.static),
            "demographic": registry.demographic_names,
            "ethnicity_vocab": list(registry.ethnicity_vocab),
            "insurance_vocab": list(registry.insurance_vocab),
        },
        "samples": entries,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, allow_nan=False, separators=(",", ":"))
        handle.write("\n")


def read_bundle(path) -> dict:
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    if doc.get("format") != BUNDLE_FORMAT:
        raise DataError(f"{path}: not an {BUNDLE_FORMAT} bundle")
    n_dyn = len(doc["registry"]["dynamic"])
    samples = {}
    for key, entry in doc["samples"].items():
        samples[key] = {
            "label": entry["label"],
            "window_start": entry["window_start"],
            "window_end": entry["window_end"],
            "tensor": SampleTensor(
                int(key),
                np.array(entry["dynamic"], dtype=np.float64).reshape(len(entry["dynamic"]), n_dyn),
                np.array(entry["presence"], dtype=np.uint8).reshape(len(entry["presence"]), n_dyn),
                np.array(entry["static"], dtype=np.uint8),
                np.array(entry["demographic"], dtype=np.float64),
            ),
        }
    return {"registry": doc["registry"], "samples": samples}
