"""Backend selection for the binning/imputation kernels.

The compiled extension is used when it imports; otherwise, or when
``EHRPREP_PURE_PYTHON`` is set, the NumPy fallback is used.
"""
import logging
import os
from importlib import import_module

log = logging.getLogger(__name__)

AGG_CODES = {"mean": 0, "last": 1, "max": 2}
IMPUTE_RAW, IMPUTE_ZERO, IMPUTE_FFILL_MEAN = -1, 0, 1


def get_backend(name: str = "auto"):
    """Return the kernel module for ``name`` in {"auto", "compiled", "python"}."""
    if name == "python":
        return import_module("ehrprep.timeseries._kernels_py")
    if name == "compiled":
        return import_module("ehrprep.timeseries._kernels")
    if name != "auto":
        raise ValueError(f"unknown kernel backend {name!r}")
    if os.environ.get("EHRPREP_PURE_PYTHON"):
        return get_backend("python")
    try:
        return get_backend("compiled")
    except ImportError:
        log.info("compiled kernels unavailable; using NumPy fallback")
        return get_backend("python")


_backend = get_backend()
BACKEND = "compiled" if _backend.__name__.endswith("._kernels") else "python"
bin_measurements = _backend.bin_measurements
impute_grid = _backend.impute_grid
