import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehrprep.cohort import CohortSample
from ehrprep.errors import ConfigError
from ehrprep.ingest import AdmissionRow, MedicationRow
from ehrprep.timeseries import (LABS, MEDICATIONS, PROCEDURES, VITALS, Event, EventArrays, FeatureRegistry,
                                GridSpec, Imputation, bin_events, build_tensors, impute, verify_times)
from ehrprep.timeseries import kernels
from ehrprep.timeutil import HOUR

from conftest import BACKENDS

REGISTRY = FeatureRegistry(dynamic=[(LABS, "a"), (LABS, "b"), (VITALS, "hr"), (MEDICATIONS, "m"),
                                    (PROCEDURES, "p")])


def oracle(events, window_start, grid, registry, aggregator="mean", mode="ForwardFillMean"):
    """Bin and impute one sample bin by bin with plain Python lists."""
    res, width, nb = grid.res_seconds, grid.window_seconds, grid.n_bins
    nf = len(registry.dynamic)
    m = registry.n_measurement
    cells = [[[] for _ in range(nf)] for _ in range(nb)]
    presence = [[0] * nf for _ in range(nb)]
    values = [[0.0] * nf for _ in range(nb)]
    for order, ev in enumerate(events):
        j = registry.index.get((ev.family, ev.code))
        if j is None:
            continue
        if ev.family == MEDICATIONS:
            s, e = ev.time - window_start, ev.stop - window_start
            for k in range(nb):
                lo, hi = k * res, (k + 1) * res
                touches = s <= width and e >= lo and (s < hi or (k == nb - 1 and s <= width)) and s <= e
                if touches:
                    values[k][j] += 1.0 if ev.value is None else ev.value
                    presence[k][j] = 1
            continue
        rel = ev.time - window_start
        if not 0 <= rel <= width:
            continue
        k = min(rel // res, nb - 1)
        presence[k][j] = 1
        if ev.family == PROCEDURES:
            values[k][j] = 1.0
        elif ev.value is not None:
            cells[k][j].append((rel, order, ev.value))
    for j in range(m):
        observed = []
        for k in range(nb):
            vals = cells[k][j]
            if not vals:
                values[k][j] = None
                continue
            if aggregator == "mean":
                total = 0.0
                for _, _, v in vals:
                    total += v
                values[k][j] = total / len(vals)
            elif aggregator == "max":
                values[k][j] = max(v for _, _, v in vals)
            else:
                values[k][j] = max(vals)[2]
            observed.append(values[k][j])
        if mode == "None" or not observed:
            for k in range(nb):
                if values[k][j] is None:
                    values[k][j] = 0.0
            continue
        total = 0.0
        for v in observed:
            total += v
        carry = total / len(observed)
        for k in range(nb):
            if values[k][j] is None:
                values[k][j] = carry
            else:
                carry = values[k][j]
    return np.array(values, dtype=float), np.array(presence, dtype=np.uint8)


def run(events, window_start, grid, registry=REGISTRY, aggregator="mean", mode="ForwardFillMean"):
    return impute(bin_events(events, window_start, grid, registry, aggregator), mode)


def col(registry, fam, code):
    return registry.index[(fam, code)]


# worked examples

def test_lab_mean_in_bin():
    grid = GridSpec(2, 6)
    binned = bin_events([Event(LABS, "a", 1800, 5.0), Event(LABS, "a", 5400, 7.0)], 0, grid, REGISTRY)
    assert binned.values[0, 0] == 6.0 and binned.presence[0, 0] == 1


def test_medication_interval():
    out = run([Event(MEDICATIONS, "m", 1 * HOUR, 10.0, stop=5 * HOUR)], 0, GridSpec(2, 6))
    assert out[:, col(REGISTRY, MEDICATIONS, "m")].tolist() == [10.0, 10.0, 10.0]


def test_overlapping_doses_sum():
    events = [Event(MEDICATIONS, "m", 0, 10.0, stop=HOUR), Event(MEDICATIONS, "m", HOUR, 5.0, stop=3 * HOUR)]
    out = run(events, 0, GridSpec(2, 6))
    assert out[:, col(REGISTRY, MEDICATIONS, "m")].tolist() == [15.0, 5.0, 0.0]


def test_procedure_marker():
    out = run([Event(PROCEDURES, "p", 3 * HOUR)], 0, GridSpec(2, 6))
    assert out[:, col(REGISTRY, PROCEDURES, "p")].tolist() == [0.0, 1.0, 0.0]


@pytest.mark.parametrize("times,values,mode,expected", [
    ([0, 3], [5.0, 7.0], "ForwardFillMean", [5.0, 5.0, 5.0, 7.0]),
    ([1, 2], [4.0, 6.0], "ForwardFillMean", [5.0, 4.0, 6.0]),
    ([0], [5.0], "None", [5.0, 0.0]),
])
def test_imputation_examples(times, values, mode, expected):
    grid = GridSpec(1, len(expected))
    events = [Event(LABS, "a", t * HOUR + 60, v) for t, v in zip(times, values)]
    assert run(events, 0, grid, mode=mode)[:, 0].tolist() == expected


def test_unobserved_feature_zero():
    out = run([Event(LABS, "a", 60, 1.0)], 0, GridSpec(1, 3))
    assert out[:, 1].tolist() == [0.0, 0.0, 0.0]


def test_right_edge_in_last_bin():
    binned = bin_events([Event(LABS, "a", 6 * HOUR, 3.0), Event(LABS, "a", 6 * HOUR + 1, 9.0)], 0, GridSpec(2, 6),
                        REGISTRY)
    assert binned.values[2, 0] == 3.0


def test_grid_shape_and_validation():
    assert GridSpec(2, 48).n_bins == 24
    assert run([], 0, GridSpec(0.5, 3)).shape == (6, len(REGISTRY.dynamic))
    with pytest.raises(ConfigError):
        GridSpec(5, 48)
    with pytest.raises(ConfigError):
        GridSpec(0, 48)


def test_registry_family_order():
    with pytest.raises(ValueError):
        FeatureRegistry(dynamic=[(VITALS, "x"), (LABS, "y")])


# verification

def test_verify_times_examples():
    adm = AdmissionRow(1, 1, 10 * HOUR, 100 * HOUR, None, False, "x", "y")
    bad_adm = AdmissionRow(2, 1, 50 * HOUR, 40 * HOUR, None, False, "x", "y")
    meds = [
        MedicationRow(1, None, "a", None, 8 * HOUR, 50 * HOUR, 1.0, "mg"),     # start clamped
        MedicationRow(1, None, "b", None, 20 * HOUR, 15 * HOUR, 1.0, "mg"),    # start > stop
        MedicationRow(1, None, "c", None, 120 * HOUR, 130 * HOUR, 1.0, "mg"),  # after discharge
        MedicationRow(1, None, "d", None, 90 * HOUR, 110 * HOUR, 1.0, "mg"),   # stop clamped
        MedicationRow(2, None, "e", None, 41 * HOUR, 45 * HOUR, 1.0, "mg"),    # admission invalid
    ]
    admissions, kept, report = verify_times([adm, bad_adm], meds)
    assert admissions == [adm]
    assert [(m.drug_name, m.start_time, m.stop_time) for m in kept] == [
        ("a", 10 * HOUR, 50 * HOUR), ("d", 90 * HOUR, 100 * HOUR)]
    assert report.actions == Counter({
        "admission_admit_after_discharge": 1, "medication_start_after_stop": 1,
        "medication_start_after_discharge": 1, "medication_start_clamped": 1, "medication_stop_clamped": 1,
        "medication_without_valid_admission": 1})


# oracle and properties

event_strategy = st.one_of(
    st.builds(Event, st.just(LABS), st.sampled_from(["a", "b", "zz"]), st.integers(-3 * HOUR, 9 * HOUR),
              st.one_of(st.none(), st.floats(-100, 100, allow_nan=False))),
    st.builds(Event, st.just(VITALS), st.just("hr"), st.integers(-3 * HOUR, 9 * HOUR),
              st.floats(-100, 100, allow_nan=False)),
    st.builds(lambda t, d, v: Event(MEDICATIONS, "m", t, v, stop=t + d), st.integers(-4 * HOUR, 9 * HOUR),
              st.integers(0, 5 * HOUR), st.one_of(st.none(), st.floats(0, 50))),
    st.builds(Event, st.just(PROCEDURES), st.just("p"), st.integers(-3 * HOUR, 9 * HOUR)),
)


@settings(max_examples=300, deadline=None)
@given(st.lists(event_strategy, max_size=25), st.sampled_from(["mean", "last", "max"]),
       st.sampled_from(["ForwardFillMean", "None"]), st.sampled_from([(1, 6), (2, 6), (0.5, 3), (3, 6)]))
def test_binning_matches_oracle(events, aggregator, mode, grid_args):
    grid = GridSpec(*grid_args)
    expected_values, expected_presence = oracle(events, 0, grid, REGISTRY, aggregator, mode)
    binned = bin_events(events, 0, grid, REGISTRY, aggregator)
    np.testing.assert_array_equal(binned.presence, expected_presence)
    np.testing.assert_array_equal(impute(binned, mode), expected_values)


@settings(max_examples=200, deadline=None)
@given(st.lists(event_strategy, max_size=20), st.lists(event_strategy, max_size=10))
def test_outside_events_do_not_leak(inside, extra):
    grid = GridSpec(2, 6)
    start = 10 * HOUR
    shifted = [Event(e.family, e.code, e.time + start, e.value, None if e.stop is None else e.stop + start)
               for e in inside]
    # move every extra event entirely outside [start, start + 6h]
    outside = []
    for e in extra:
        if e.stop is not None:
            outside.append(Event(e.family, e.code, start - 10 * HOUR, e.value, stop=start - 1))
        else:
            outside.append(Event(e.family, e.code, start + grid.window_seconds + 1 + abs(e.time), e.value))
    base = run(shifted, start, grid)
    noisy = run(shifted + outside, start, grid)
    assert base.tobytes() == noisy.tobytes()


@settings(max_examples=100, deadline=None)
@given(st.lists(event_strategy, max_size=25))
def test_presence_and_ffill_properties(events):
    grid = GridSpec(1, 6)
    binned = bin_events(events, 0, grid, REGISTRY)
    filled = impute(binned)
    m = REGISTRY.n_measurement
    observed = ~np.isnan(binned.values[:, :m])
    assert np.array_equal(filled[:, :m][observed], binned.values[:, :m][observed])
    for j in range(m):
        bins = {min(e.time // HOUR, 5) for e in events
                if (e.family, e.code) == REGISTRY.dynamic[j] and 0 <= e.time <= grid.window_seconds}
        assert binned.presence[:, j].sum() == len(bins)


# backends

def _random_batch(rng, n_samples, n_events, n_feat, window):
    pos = np.sort(rng.integers(0, n_samples, n_events))
    offsets = np.searchsorted(pos, np.arange(n_samples + 1)).astype(np.int64)
    times = rng.integers(-window // 4, window + window // 4, n_events).astype(np.int64)
    feats = rng.integers(0, n_feat, n_events).astype(np.int64)
    values = rng.normal(size=n_events)
    values[rng.random(n_events) < 0.1] = np.nan
    return offsets, times, feats, values


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
@pytest.mark.parametrize("agg", [0, 1, 2])
@pytest.mark.parametrize("mode", [kernels.IMPUTE_RAW, kernels.IMPUTE_ZERO, kernels.IMPUTE_FFILL_MEAN])
def test_backends_bit_identical(agg, mode):
    py, cy = kernels.get_backend("python"), kernels.get_backend("compiled")
    rng = np.random.default_rng(agg * 10 + mode + 1)
    args = _random_batch(rng, 200, 20000, 7, 48 * HOUR)
    ref_v, ref_p = py.bin_measurements(*args, 48 * HOUR, 2 * HOUR, 24, 7, agg, mode, 1)
    for threads in (1, 3):
        for backend in (py, cy):
            v, p = backend.bin_measurements(*args, 48 * HOUR, 2 * HOUR, 24, 7, agg, mode, threads)
            assert v.tobytes() == ref_v.tobytes() and p.tobytes() == ref_p.tobytes()


def test_impute_grid_backend(backend):
    raw = np.array([[[np.nan], [4.0], [6.0]]])
    assert backend.impute_grid(raw, kernels.IMPUTE_FFILL_MEAN)[0, :, 0].tolist() == [5.0, 4.0, 6.0]
    assert backend.impute_grid(raw, kernels.IMPUTE_ZERO)[0, :, 0].tolist() == [0.0, 4.0, 6.0]


def test_build_tensors(backend):
    samples = [CohortSample(i, 1, i, None, 0, 0, 6 * HOUR, 40, "F", "WHITE", "Other") for i in range(3)]
    registry = FeatureRegistry(dynamic=[(LABS, "a")], static=["I50", "N18"], ethnicity_vocab=["WHITE"],
                               insurance_vocab=["Other"])
    meas = EventArrays.from_lists([0, 0, 2], [0, 0, 0], [HOUR, 5 * HOUR, 7 * HOUR], [1.0, 3.0, 9.0])
    tally = Counter()
    tensors = build_tensors(samples, registry, GridSpec(2, 6), meas, EventArrays.empty(True), EventArrays.empty(),
                            [{"N18"}, set(), {"I50", "X99"}], tally=tally)
    assert tensors[0].dynamic[:, 0].tolist() == [1.0, 1.0, 3.0]
    assert tensors[2].dynamic[:, 0].tolist() == [0.0, 0.0, 0.0]
    assert tensors[0].static.tolist() == [0, 1] and tensors[2].static.tolist() == [1, 0]
    assert tensors[1].demographic.tolist() == [40.0, 0.0, 0.0, 0.0]
    assert tally["measurement_zero_filled"] == 2
