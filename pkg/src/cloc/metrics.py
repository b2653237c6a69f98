"""Evaluation: accuracy, MAE, boundary error rates, margin report, embedding diagnostics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import spearmanr

from .datagen import Dataset
from .margins import MarginSet, OrdinalSchema

NORMALIZATIONS = ("pair", "total", "per_class")


@dataclass
class EvalReport:
    accuracy: float
    mae: float
    confusion: list[list[int]]
    boundary_errors: list[float | None]
    n: int
    normalization: str = "pair"

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true ranks, columns predicted ranks (both 1-based)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true - 1, y_pred - 1), 1)
    return cm


def boundary_error_rates(cm: np.ndarray, normalization: str = "pair") -> list[float | None]:
    """Cross-confusion of each adjacent pair of ranks.

    ``pair`` divides by the number of true labels in the pair, ``total`` by
    all samples, ``per_class`` averages the two one-directional rates.
    A boundary with nothing to normalize by reports None.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    rows = cm.sum(axis=1)
    total = cm.sum()
    out: list[float | None] = []
    for i in range(cm.shape[0] - 1):
        cross = cm[i, i + 1] + cm[i + 1, i]
        if normalization == "pair":
            mass = rows[i] + rows[i + 1]
            out.append(None if mass == 0 else float(cross / mass))
        elif normalization == "total":
            out.append(None if total == 0 else float(cross / total))
        else:
            if rows[i] == 0 or rows[i + 1] == 0:
                out.append(None)
            else:
                out.append(float(0.5 * (cm[i, i + 1] / rows[i] + cm[i + 1, i] / rows[i + 1])))
    return out


def evaluate_predictions(y_true, y_pred, n_classes: int, normalization: str = "pair") -> EvalReport:
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        raise ValueError("cannot evaluate an empty dataset")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    n = int(cm.sum())
    idx = np.arange(n_classes)
    mae = float((cm * np.abs(idx[:, None] - idx[None, :])).sum() / n)
    return EvalReport(float(np.trace(cm) / n), mae, cm.tolist(), boundary_error_rates(cm, normalization),
                      n, normalization)


def evaluate(model, data: Dataset, use_clean: bool = True, normalization: str = "pair") -> EvalReport:
    """Score ``model`` on ``data``; clean labels are used when present unless told otherwise."""
    if len(data) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    truth = data.truth if use_clean else data.y
    return evaluate_predictions(truth, model.predict(data.X), data.n_classes, normalization)


def margin_report(margins: MarginSet, schema: OrdinalSchema | None = None) -> dict:
    schema = margins.schema if schema is None else schema
    values = margins.values()
    entries = [{"boundary": h, "name": schema.boundary_name(h), "mode": margins.boundary_mode(h),
                "value": float(values[h - 1])} for h in range(1, schema.n_boundaries + 1)]
    top = float(values.max())
    winners = [h for h in range(1, schema.n_boundaries + 1) if values[h - 1] == top]
    return {
        "boundaries": entries,
        "argmax": winners[0] if len(winners) == 1 else winners,
        "tie": len(winners) > 1,
        "activation": margins.activation,
        "rho": margins.rho,
    }


def class_centroids(z: np.ndarray, labels, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    present = np.array([c for c in range(1, n_classes + 1) if np.any(labels == c)])
    cents = np.stack([z[labels == c].mean(axis=0) for c in present])
    return cents, present


def centroid_ordering_score(centroids: np.ndarray, ranks) -> float | None:
    """|Spearman| between rank order and centroid positions on their first principal axis."""
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.shape[0] < 2:
        raise ValueError("need at least two class centroids")
    centered = centroids - centroids.mean(axis=0)
    if np.allclose(centered, 0.0, atol=1e-15):
        return None
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[0]
    if np.all(proj == proj[0]):
        return None
    rho = spearmanr(proj, np.asarray(ranks)).statistic
    return float(abs(rho))


def ordering_score(model, data: Dataset, use_clean: bool = True) -> float | None:
    labels = data.truth if use_clean else data.y
    cents, present = class_centroids(model.embed(data.X), labels, data.n_classes)
    if present.size < 2:
        raise ValueError("ordering score needs at least two classes present")
    return centroid_ordering_score(cents, present)


def principal_components(z: np.ndarray, k: int = 2) -> np.ndarray:
    """Projection onto the top-k principal directions, signs fixed so each
    direction's largest-magnitude loading is positive."""
    z = np.asarray(z, dtype=np.float64)
    centered = z - z.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    out = np.zeros((z.shape[0], k))
    for i in range(min(k, vt.shape[0])):
        v = vt[i]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        out[:, i] = centered @ v
    return out


def export_embeddings(model, data: Dataset, path) -> None:
    z = model.embed(data.X)
    pcs = principal_components(z, 2)
    header = ["id", "label"] + [f"z{i + 1}" for i in range(z.shape[1])] + ["p1", "p2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(data)):
            w.writerow([int(data.ids[i]), int(data.y[i])] + [repr(float(v)) for v in z[i]]
                       + [repr(float(v)) for v in pcs[i]])
