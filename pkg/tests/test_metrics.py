import csv

import numpy as np
import pytest

from cloc.datagen import Dataset, SyntheticSpec, generate
from cloc.margins import OrdinalSchema, init_margins, margins_from_values
from cloc.metrics import (
    boundary_error_rates, centroid_ordering_score, confusion_matrix, evaluate, evaluate_predictions,
    export_embeddings, margin_report, ordering_score, principal_components,
)
from cloc.model import Model


class Fixed:
    """Stand-in model returning precomputed predictions and embeddings."""

    def __init__(self, pred=None, z=None):
        self._pred, self._z = pred, z

    def predict(self, X):
        return self._pred

    def embed(self, X):
        return self._z


def test_perfect_predictor():
    y = np.array([1, 2, 3, 4, 5, 5, 3])
    r = evaluate_predictions(y, y, 5)
    assert r.accuracy == 1.0 and r.mae == 0.0
    assert r.boundary_errors == [0.0, 0.0, 0.0, 0.0]


def test_off_by_one_upward():
    y = np.array([1, 1, 2, 3, 4])
    r = evaluate_predictions(y, y + 1, 5)
    assert r.accuracy == 0.0 and r.mae == 1.0


def test_fixture_confusion_recount():
    y_true = [1, 1, 1, 2, 2, 3, 3, 3, 3, 1]
    y_pred = [1, 2, 3, 2, 1, 3, 2, 3, 3, 1]
    r = evaluate_predictions(y_true, y_pred, 3)
    assert r.confusion == [[2, 1, 1], [1, 1, 0], [0, 1, 3]]
    assert r.n == 10
    assert r.accuracy == pytest.approx(6 / 10)
    assert r.mae == pytest.approx((1 + 2 + 1 + 1) / 10)
    # pair 1|2: 1 + 1 cross errors over 4 + 2 samples; pair 2|3: 0 + 1 over 2 + 4
    assert r.boundary_errors == pytest.approx([2 / 6, 1 / 6])
    cm = np.array(r.confusion)
    assert boundary_error_rates(cm, "total") == pytest.approx([2 / 10, 1 / 10])
    assert boundary_error_rates(cm, "per_class") == pytest.approx([0.5 * (1 / 4 + 1 / 2), 0.5 * (0 / 2 + 1 / 4)])


def test_confusion_invariants():
    rng = np.random.default_rng(0)
    y_true = rng.integers(1, 6, size=200)
    y_pred = rng.integers(1, 6, size=200)
    cm = confusion_matrix(y_true, y_pred, 5)
    np.testing.assert_array_equal(cm.sum(1), np.bincount(y_true, minlength=6)[1:])
    r = evaluate_predictions(y_true, y_pred, 5)
    assert r.accuracy == np.trace(cm) / 200
    assert r.mae == pytest.approx(np.mean(np.abs(y_true - y_pred)))


def test_empty_boundary_and_bad_flag():
    cm = np.array([[3, 0, 0], [0, 0, 0], [0, 0, 0]])
    assert boundary_error_rates(cm, "pair") == [0.0, None]
    assert boundary_error_rates(cm, "per_class") == [None, None]
    with pytest.raises(ValueError):
        boundary_error_rates(cm, "bogus")
    with pytest.raises(ValueError):
        evaluate_predictions([], [], 3)


def test_evaluate_uses_clean_labels_when_present():
    d = Dataset([0, 1, 2, 3], np.zeros((4, 1)), [1, 2, 2, 2], 2, clean_y=[1, 1, 2, 2])
    m = Fixed(pred=np.array([1, 1, 2, 2]))
    assert evaluate(m, d).accuracy == 1.0
    assert evaluate(m, d, use_clean=False).accuracy == 0.75


def test_margin_report_argmax_is_critical_boundary():
    ms = margins_from_values(OrdinalSchema(5), [0.35, 0.41, 0.23, 0.30])
    r = margin_report(ms)
    assert r["argmax"] == 2 and not r["tie"]
    assert [e["name"] for e in r["boundaries"]] == ["1|2", "2|3", "3|4", "4|5"]


def test_margin_report_constant_margins_tie():
    r = margin_report(init_margins(OrdinalSchema(5), "all_fixed", constant=1.0))
    assert [e["value"] for e in r["boundaries"]] == [1.0] * 4
    assert r["tie"] and r["argmax"] == [1, 2, 3, 4]
    assert all(e["mode"] == "fixed" for e in r["boundaries"])


def test_margin_report_is_pure():
    ms = init_margins(OrdinalSchema(4), seed=3)
    assert margin_report(ms) == margin_report(ms)
    before = ms.values()
    margin_report(ms)
    np.testing.assert_array_equal(ms.values(), before)


def test_ordering_monotone_line():
    cents = np.outer([0.0, 1.0, 1.7, 3.0, 3.2], [0.6, 0.8])
    assert centroid_ordering_score(cents, [1, 2, 3, 4, 5]) == pytest.approx(1.0)
    # reversed direction is still a perfect ordering
    assert centroid_ordering_score(cents[::-1], [1, 2, 3, 4, 5]) == pytest.approx(1.0)


def test_ordering_shuffled_line():
    pos = np.array([0.0, 2.0, 1.0, 3.0])  # ranks placed 1,3,2,4
    cents = np.outer(pos, [1.0, 0.0, 0.0])
    assert centroid_ordering_score(cents, [1, 2, 3, 4]) < 1.0


def test_ordering_degenerate_centroids():
    assert centroid_ordering_score(np.ones((3, 2)), [1, 2, 3]) is None


def test_ordering_score_from_model():
    d = Dataset(np.arange(6), np.zeros((6, 1)), [1, 1, 2, 2, 3, 3], 3)
    z = np.array([[0, 0], [0.2, 0], [1, 0.1], [1.2, 0], [2, 0], [2.1, 0.1]], dtype=float)
    assert ordering_score(Fixed(z=z), d) == pytest.approx(1.0)


def test_pca_matches_covariance_eigendecomposition():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(80, 5)) @ rng.normal(size=(5, 5))
    pcs = principal_components(z, 2)
    centered = z - z.mean(0)
    evals, evecs = np.linalg.eigh(np.cov(centered, rowvar=False))
    top = evecs[:, np.argsort(evals)[::-1][:2]]
    for i in range(2):
        v = top[:, i]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        np.testing.assert_allclose(pcs[:, i], centered @ v, atol=1e-8, rtol=0)


def test_export_embeddings_roundtrip(tmp_path):
    d = generate(SyntheticSpec(n_classes=3, gaps=[1, 1], dim=4, n_per_class=12, seed=2))
    m = Model.init(4, 3, hidden=(6,), embedding_dim=3, seed=1)
    path = tmp_path / "emb.csv"
    export_embeddings(m, d, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "label", "z1", "z2", "z3", "p1", "p2"]
    assert len(rows) - 1 == len(d)
    z = np.array([[float(v) for v in r[2:5]] for r in rows[1:]])
    np.testing.assert_array_equal(z, m.embed(d.X))
