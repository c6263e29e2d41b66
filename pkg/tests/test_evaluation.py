import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehrprep.evaluation import (FAIRNESS_COLUMNS, FairnessReport, GroupRates, age_band, auprc, auroc, calibration,
                                confusion_metrics, evaluate, fairness, parse_fairness_report, render_fairness_gaps,
                                render_fairness_report, write_metrics)


def auroc_oracle(labels, scores):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def auprc_oracle(labels, scores):
    n_pos = sum(labels)
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        recall = tp / n_pos
        total += (recall - prev_recall) * tp / (tp + fp)
        prev_recall = recall
    return total


def test_confusion_examples():
    m = confusion_metrics([1, 0, 1, 0], [0.9, 0.1, 0.8, 0.2])
    assert (m["accuracy"], m["precision"], m["recall"]) == (1.0, 1.0, 1.0)
    m = confusion_metrics([1, 0, 0], [0.1, 0.2, 0.3])
    assert m["precision"] is None and m["npv"] == pytest.approx(2 / 3)
    assert confusion_metrics([1, 0], [0.4, 0.6])["accuracy"] == 0.0
    with pytest.raises(ValueError):
        confusion_metrics([], [])


def test_auroc_examples():
    assert auroc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75
    assert auroc_oracle([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75
    assert auroc([0, 1, 0, 1], [0.1, 0.9, 0.2, 0.8]) == 1.0
    assert auroc([0, 1, 1, 0], [0.3] * 4) == 0.5
    assert auroc([1, 1], [0.2, 0.3]) is None


def test_auroc_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(2, 120))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            continue
        scores = rng.integers(0, 10, n) / 10 if rng.random() < 0.5 else rng.random(n)
        assert abs(auroc(labels, scores) - auroc_oracle(labels.tolist(), scores.tolist())) <= 1e-12


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 20)), min_size=2, max_size=60))
def test_auroc_monotone_invariance(pairs):
    labels = [y for y, _ in pairs]
    if len(set(labels)) < 2:
        return
    scores = np.array([s / 20 for _, s in pairs])
    assert auroc(labels, scores) == auroc(labels, scores ** 3)


def test_auprc_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            continue
        scores = rng.integers(0, 8, n) / 8
        assert auprc(labels, scores) == pytest.approx(auprc_oracle(labels.tolist(), scores.tolist()), abs=1e-12)
    assert auprc([0, 1, 0, 1], [0.1, 0.9, 0.2, 0.8]) == 1.0


def test_calibration_examples():
    assert calibration([0, 1], [0.2, 0.8], 2) == (0.2, 0.2)
    assert calibration([0, 1, 1, 0], [0.5] * 4, 2) == (0.0, 0.0)
    assert calibration([1], [1.0]) == (0.0, 0.0)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(1, 9), st.integers(1, 5)), min_size=1, max_size=8, unique_by=lambda p: p[0]))
def test_calibration_perfect_fixtures(bins):
    # bin k holds 10 samples scored k/10 with exactly k positives
    labels, scores = [], []
    for k, reps in bins:
        for _ in range(reps):
            labels += [1] * k + [0] * (10 - k)
            scores += [k / 10 + 0.0] * 10
    ece, mce = calibration(labels, np.array(scores) + 0.0, 10)
    # k/10 sits on the boundary of bin k, so bin k holds exactly these samples
    assert abs(ece) <= 1e-12 and abs(mce) <= 1e-12


def test_metric_report_file(tmp_path):
    report = evaluate([0, 1, 1, 0], [0.2, 0.7, 0.6, 0.1])
    write_metrics(tmp_path / "m.csv", report)
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == "metric,value" and "auroc,1.0" in text
    single = evaluate([1, 1], [0.7, 0.8])
    write_metrics(tmp_path / "s.csv", single)
    assert "auroc,NaN" in (tmp_path / "s.csv").read_text()


SIX = dict(labels=[1, 0, 1, 0, 1, 0], scores=[0.9, 0.8, 0.1, 0.2, 0.7, 0.3],
           groups={"g": ["A", "A", "A", "A", "B", "B"]})


def test_six_sample_fairness():
    report = fairness(SIX["labels"], SIX["scores"], 0.5, SIX["groups"])
    rates = report.rates_for("g")
    assert rates["A"]["TPR"] == 0.5 and rates["A"]["FPR"] == 0.5 and rates["A"]["PR"] == 0.5
    assert rates["B"]["TPR"] == 1.0 and rates["B"]["FPR"] == 0.0 and rates["B"]["PR"] == 0.5
    assert report.gaps["g"] == {"demographic_parity": 0.0, "equalized_opportunity": 0.5, "equalized_odds": 0.5}
    a = [g for g in report.groups if g.group == "A"][0]
    assert (a.tp, a.fp, a.tn, a.fn) == (1, 1, 1, 1)


def test_undefined_rate_rendered_nan():
    report = fairness([0, 0, 1, 0], [0.6, 0.1, 0.9, 0.2], 0.5, {"ethnicity": ["X", "X", "Y", "Y"]})
    assert report.rates_for("ethnicity")["X"]["TPR"] is None
    rows = render_fairness_report(report).splitlines()
    assert rows[0] == ",".join(FAIRNESS_COLUMNS)
    assert rows[1] == "ethnicity,X,NaN,0.5000,0.5000,NaN,0.5000"


def test_published_gender_rates_render():
    # 287 of 5000 and 398 of 5000 positives predicted positive
    report = FairnessReport(groups=[GroupRates("gender", "F", 5000, 287, 0, 0, 4713),
                                    GroupRates("gender", "M", 5000, 398, 0, 0, 4602)])
    lines = render_fairness_report(report).splitlines()
    assert lines[1].startswith("gender,F,0.0574,") and lines[2].startswith("gender,M,0.0796,")


def test_empty_report_and_roundtrip():
    assert render_fairness_report(FairnessReport()) == ",".join(FAIRNESS_COLUMNS) + "\n"
    report = fairness(SIX["labels"], SIX["scores"], 0.5, {"g": SIX["groups"]["g"], "h": ["u"] * 6})
    parsed = parse_fairness_report(render_fairness_report(report))
    for attr in ("g", "h"):
        for group, rates in report.rates_for(attr).items():
            for k, v in rates.items():
                assert parsed[attr][group][k] == (None if v is None else round(v, 4))
    assert "single group" in report.warnings[0]
    assert report.gaps["h"]["demographic_parity"] == 0.0
    assert render_fairness_gaps(report).splitlines()[1] == "g,0.0000,0.5000,0.5000"


def test_identical_predictions_zero_gaps():
    report = fairness([1, 0, 1, 0], [0.9, 0.1, 0.9, 0.1], 0.5, {"g": ["a", "a", "b", "b"]})
    assert set(report.gaps["g"].values()) == {0.0}


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1), st.sampled_from("abcd")), min_size=1, max_size=50))
def test_group_aggregation_and_permutation(rows):
    labels = [r[0] for r in rows]
    scores = [r[1] for r in rows]
    groups = [r[2] for r in rows]
    report = fairness(labels, scores, 0.5, {"g": groups})
    overall = sum(s >= 0.5 for s in scores) / len(rows)
    weighted = sum(g.n * g.rates["PR"] for g in report.groups) / len(rows)
    assert math.isclose(weighted, overall, abs_tol=1e-12)
    renamed = fairness(labels, scores, 0.5, {"g": [{"a": "d", "b": "c", "c": "a", "d": "b"}[x] for x in groups]})
    assert renamed.gaps["g"]["demographic_parity"] == report.gaps["g"]["demographic_parity"]
    for gap in report.gaps["g"].values():
        assert 0.0 <= gap <= 1.0


@pytest.mark.parametrize("age,band", [(18, "18-30"), (29, "18-30"), (30, "30-40"), (45, "40-50"), (89, "80-90"),
                                      (90, "90-100"), (104, "90-100")])
def test_age_band(age, band):
    assert age_band(age) == band
