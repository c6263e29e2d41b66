from .core import (
    AGGREGATORS,
    DIAGNOSES,
    DYNAMIC_FAMILIES,
    LABS,
    MEASUREMENT_FAMILIES,
    MEDICATIONS,
    PROCEDURES,
    VITALS,
    BinnedGrid,
    Event,
    EventArrays,
    FeatureRegistry,
    GridSpec,
    Imputation,
    SampleTensor,
    VerificationReport,
    bin_cohort,
    bin_events,
    build_tensors,
    impute,
    verify_times,
)
from .kernels import BACKEND

__all__ = [
    "AGGREGATORS", "BACKEND", "DIAGNOSES", "DYNAMIC_FAMILIES", "LABS", "MEASUREMENT_FAMILIES",
    "MEDICATIONS", "PROCEDURES", "VITALS", "BinnedGrid", "Event", "EventArrays", "FeatureRegistry",
    "GridSpec", "Imputation", "SampleTensor", "VerificationReport", "bin_cohort", "bin_events",
    "build_tensors", "impute", "verify_times",
]
