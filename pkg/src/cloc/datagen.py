"""Synthetic ordinal data on a latent line, label-bias injection, CSV I/O."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class DataFormatError(ValueError):
    """Malformed dataset file or inconsistent dataset contents."""


@dataclass
class Dataset:
    """Samples with 1-based rank labels; ``clean_y`` keeps pre-bias labels."""

    ids: np.ndarray
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    clean_y: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.clean_y is not None:
            self.clean_y = np.asarray(self.clean_y, dtype=np.int64)
        n = self.ids.shape[0]
        if self.X.ndim != 2 or self.X.shape[0] != n or self.y.shape != (n,):
            raise DataFormatError(f"inconsistent dataset arrays: ids {self.ids.shape}, "
                                  f"X {self.X.shape}, y {self.y.shape}")
        if self.clean_y is not None and self.clean_y.shape != (n,):
            raise DataFormatError("clean_y does not match the sample count")
        for name, lab in (("label", self.y), ("clean_label", self.clean_y)):
            if lab is not None and lab.size and (lab.min() < 1 or lab.max() > self.n_classes):
                raise DataFormatError(f"{name} outside [1, {self.n_classes}]")

    def __len__(self):
        return int(self.ids.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    @property
    def truth(self) -> np.ndarray:
        """Clean labels when available, otherwise the training labels."""
        return self.y if self.clean_y is None else self.clean_y

    def class_counts(self, labels: np.ndarray | None = None) -> np.ndarray:
        lab = self.y if labels is None else labels
        return np.bincount(lab, minlength=self.n_classes + 1)[1:]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.ids[idx], self.X[idx], self.y[idx], self.n_classes,
                       None if self.clean_y is None else self.clean_y[idx])


@dataclass
class SyntheticSpec:
    """Gaussian classes at cumulative gap positions along a random direction.

    ``seed`` fixes the direction; ``sample_seed`` (defaults to ``seed``)
    fixes the noise, so train and test sets can share geometry.
    """

    n_classes: int = 5
    dim: int = 8
    n_per_class: int | list[int] = 200
    gaps: list[float] = field(default_factory=lambda: [1.0, 1.0, 0.5, 1.0])
    sigma: float = 0.25
    seed: int = 0
    sample_seed: int | None = None
    id_offset: int = 0

    def __post_init__(self):
        self.gaps = [float(g) for g in self.gaps]
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if len(self.gaps) != self.n_classes - 1:
            raise ValueError(f"{len(self.gaps)} gaps given for {self.n_classes} classes")
        if any(g <= 0 for g in self.gaps):
            raise ValueError("gaps must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if min(self.counts) < 2:
            raise ValueError("each class needs at least 2 samples")

    @property
    def counts(self) -> list[int]:
        if isinstance(self.n_per_class, (list, tuple)):
            if len(self.n_per_class) != self.n_classes:
                raise ValueError("n_per_class list length must equal n_classes")
            return [int(n) for n in self.n_per_class]
        return [int(self.n_per_class)] * self.n_classes

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.gaps)])

    def direction(self) -> np.ndarray:
        u = np.random.default_rng(self.seed).standard_normal(self.dim)
        return u / np.linalg.norm(u)

    def centers(self) -> np.ndarray:
        return self.positions[:, None] * self.direction()[None, :]

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def generate(spec: SyntheticSpec) -> Dataset:
    centers = spec.centers()
    seed = spec.seed if spec.sample_seed is None else spec.sample_seed
    rng = np.random.default_rng([seed, 1])
    X, y = [], []
    for c, n in enumerate(spec.counts):
        X.append(centers[c] + spec.sigma * rng.standard_normal((n, spec.dim)))
        y.append(np.full(n, c + 1))
    X = np.concatenate(X)
    y = np.concatenate(y)
    return Dataset(np.arange(len(y)) + spec.id_offset, X, y, spec.n_classes)


def train_test(spec: SyntheticSpec, n_test_per_class: int | None = None,
               test_seed_offset: int = 10_000) -> tuple[Dataset, Dataset]:
    """Independent train and test draws sharing one geometry."""
    base = spec.seed if spec.sample_seed is None else spec.sample_seed
    n_test = spec.n_per_class if n_test_per_class is None else n_test_per_class
    train = generate(spec)
    test = generate(replace(spec, sample_seed=base + test_seed_offset, n_per_class=n_test,
                            id_offset=spec.id_offset + len(train)))
    return train, test


@dataclass
class BiasSpec:
    """Relabel a fraction of rank ``boundary`` upward and of ``boundary + 1`` downward."""

    boundary: int
    p_up: float = 0.6
    p_down: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("p_up", "p_down"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")

    @classmethod
    def from_dict(cls, d: dict) -> "BiasSpec":
        return cls(**d)


def relabel_count(p: float, n: int) -> int:
    """round(p * n), halves rounded up."""
    return int(math.floor(p * n + 0.5))


def inject_bias(data: Dataset, spec: BiasSpec) -> Dataset:
    c = int(spec.boundary)
    if not 1 <= c < data.n_classes:
        raise ValueError(f"boundary {c} outside [1, {data.n_classes - 1}]")
    rng = np.random.default_rng(spec.seed)
    y = data.y.copy()
    up_pool = np.flatnonzero(data.y == c)
    down_pool = np.flatnonzero(data.y == c + 1)
    up = rng.choice(up_pool, size=relabel_count(spec.p_up, up_pool.size), replace=False)
    down = rng.choice(down_pool, size=relabel_count(spec.p_down, down_pool.size), replace=False)
    y[up] = c + 1
    y[down] = c
    clean = data.y.copy() if data.clean_y is None else data.clean_y.copy()
    logger.info("relabelled %d of rank %d up and %d of rank %d down", up.size, c, down.size, c + 1)
    return Dataset(data.ids.copy(), data.X.copy(), y, data.n_classes, clean)


# -- CSV -----------------------------------------------------------------------------

def save_csv(data: Dataset, path) -> None:
    header = ["id", "label"] + [f"f{i + 1}" for i in range(data.n_features)]
    if data.clean_y is not None:
        header.append("clean_label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(data)):
            row = [str(int(data.ids[i])), str(int(data.y[i]))]
            row += [format(v, ".17g") for v in data.X[i]]
            if data.clean_y is not None:
                row.append(str(int(data.clean_y[i])))
            w.writerow(row)


def _parse_int(tok: str, what: str, line: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise DataFormatError(f"line {line}: {what} {tok!r} is not an integer") from None


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Read ``id,label,f1..fD[,clean_label]``; labels must be 1-based."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["id", "label"]:
        raise DataFormatError(f"{path} line 1: header must start with 'id,label'")
    has_clean = header[-1] == "clean_label"
    feats = header[2:-1] if has_clean else header[2:]
    if not feats or feats != [f"f{i + 1}" for i in range(len(feats))]:
        raise DataFormatError(f"{path} line 1: feature columns must be f1..fD")
    D = len(feats)
    ids, X, y, clean = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path} line {lineno}: expected {len(header)} fields, got {len(row)}")
        ids.append(_parse_int(row[0], "id", lineno))
        y.append(_parse_int(row[1], "label", lineno))
        try:
            X.append([float(v) for v in row[2:2 + D]])
        except ValueError:
            raise DataFormatError(f"{path} line {lineno}: non-numeric feature value") from None
        if has_clean:
            clean.append(_parse_int(row[-1], "clean_label", lineno))
        if y[-1] < 1 or (n_classes is not None and y[-1] > n_classes):
            raise DataFormatError(f"{path} line {lineno}: label {y[-1]} outside [1, {n_classes or 'C'}]")
    if not ids:
        raise DataFormatError(f"{path}: no data rows")
    C = n_classes if n_classes is not None else int(max(max(y), max(clean, default=0)))
    X = np.asarray(X, dtype=np.float64).reshape(len(ids), D)
    return Dataset(np.asarray(ids), X, np.asarray(y), C, np.asarray(clean) if has_clean else None)


def bayes_projection_accuracy(data: Dataset, spec: SyntheticSpec, labels: np.ndarray | None = None) -> float:
    """Accuracy of thresholding the projection on the true direction at gap midpoints."""
    t = data.X @ spec.direction()
    pos = spec.positions
    cuts = (pos[:-1] + pos[1:]) / 2.0
    pred = np.searchsorted(cuts, t) + 1
    truth = data.truth if labels is None else labels
    return float(np.mean(pred == truth))


def summarize(data: Dataset) -> dict:
    return {"n": len(data), "dim": data.n_features, "n_classes": data.n_classes,
            "counts": data.class_counts().tolist()}
