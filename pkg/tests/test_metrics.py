import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn import metrics as skm

from lvcadenet.errors import EmptyDataset
from lvcadenet.metrics import (MetricsReport, accuracy, balanced_accuracy, cohen_kappa,
                               confusion_matrix, weighted_f1)


def closed_form(cm):
    """Textbook formulas written out for a 2x2 matrix."""
    (tn, fp), (fn, tp) = cm
    n = tn + fp + fn + tp
    acc = (tn + tp) / n
    bacc = (tn / (tn + fp) + tp / (tp + fn)) / 2
    p_e = ((tn + fp) * (tn + fn) + (fn + tp) * (fp + tp)) / n ** 2
    kappa = (acc - p_e) / (1 - p_e)
    f1_0 = 2 * tn / (2 * tn + fp + fn)
    f1_1 = 2 * tp / (2 * tp + fp + fn)
    wf1 = (f1_0 * (tn + fp) + f1_1 * (fn + tp)) / n
    return acc, bacc, kappa, wf1


def test_two_class_fixture():
    cm = [[9, 1], [2, 8]]
    acc, bacc, kappa, wf1 = closed_form(cm)
    r = MetricsReport.from_confusion(cm)
    assert acc == pytest.approx(0.85, abs=1e-12) and bacc == pytest.approx(0.85, abs=1e-12)
    assert kappa == pytest.approx(0.70, abs=1e-12)
    assert wf1 == pytest.approx(0.8496, abs=1e-4)
    for got, want in zip((r.acc, r.bacc, r.ckap, r.wf1), (acc, bacc, kappa, wf1)):
        assert abs(got - want) <= 1e-12


def test_perfect_predictions():
    y = np.array([0, 1, 2, 2, 1])
    r = MetricsReport.from_predictions(y, y, 3)
    assert (r.bacc, r.ckap, r.wf1, r.acc) == (1.0, 1.0, 1.0, 1.0)


def test_single_class_perfect():
    r = MetricsReport.from_predictions([1, 1, 1], [1, 1, 1], 2)
    assert (r.bacc, r.ckap, r.wf1, r.acc) == (1.0, 1.0, 1.0, 1.0)


def test_chance_agreement():
    r = MetricsReport.from_predictions([0, 0, 1, 1], [0, 0, 0, 0], 2)
    assert r.bacc == 0.5 and r.ckap == 0.0


def test_absent_class_excluded_from_bacc():
    # class 2 never occurs in truth or prediction
    cm = [[3, 1, 0], [1, 3, 0], [0, 0, 0]]
    assert balanced_accuracy(cm) == 0.75
    # class 2 predicted but absent from truth: contributes recall 0
    cm = [[3, 0, 1], [1, 3, 0], [0, 0, 0]]
    assert balanced_accuracy(cm) == pytest.approx((0.75 + 0.75 + 0) / 3)


def test_confusion_orientation():
    cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    assert cm.tolist() == [[0, 2], [0, 1]]


def test_empty():
    with pytest.raises(EmptyDataset):
        MetricsReport.from_predictions([], [], 2)
    with pytest.raises(EmptyDataset):
        MetricsReport.from_confusion(np.zeros((2, 2)))


def test_report_dict_schema():
    d = MetricsReport.from_predictions([0, 1], [0, 0], 2).to_dict()
    assert set(d) == {"bacc", "ckap", "wf1", "acc", "confusion", "n_samples"}
    assert d["n_samples"] == 2 and d["confusion"] == [[1, 0], [1, 0]]


labels = st.integers(2, 6).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                                             min_size=1, max_size=80)))


@given(labels)
def test_against_sklearn(case):
    n, pairs = case
    y, p = np.array(pairs).T
    r = MetricsReport.from_predictions(y, p, n)
    present = np.union1d(y, p)
    assert r.acc == pytest.approx(skm.accuracy_score(y, p), abs=1e-12)
    assert r.wf1 == pytest.approx(skm.f1_score(y, p, average="weighted", labels=np.unique(y),
                                               zero_division=0), abs=1e-12)
    if len(present) > 1:
        k = skm.cohen_kappa_score(y, p)
        if np.isfinite(k):
            assert r.ckap == pytest.approx(k, abs=1e-12)
    # sklearn averages recall over the union of labels as well
    recall = skm.recall_score(y, p, labels=present, average=None, zero_division=0)
    assert r.bacc == pytest.approx(recall.mean(), abs=1e-12)


@given(labels)
def test_report_recomputable_from_confusion(case):
    n, pairs = case
    y, p = np.array(pairs).T
    r = MetricsReport.from_predictions(y, p, n)
    cm = r.confusion
    assert cm.sum() == r.n_samples == len(y) and (cm >= 0).all()
    for got, fn in ((r.bacc, balanced_accuracy), (r.ckap, cohen_kappa), (r.wf1, weighted_f1),
                    (r.acc, accuracy)):
        assert abs(got - fn(cm)) <= 1e-12
        assert 0.0 <= fn(cm) <= 1.0 or fn is cohen_kappa
