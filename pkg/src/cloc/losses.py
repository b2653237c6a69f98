"""Cross-entropy, the multi-margin n-pair hinge loss, and the joint objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .margins import MarginSet, cumulative_margin


@dataclass
class PairSets:
    """One anchor with its positive (same rank) and negative (other rank) samples."""

    anchor: Tensor
    rank: int
    positives: list[tuple[Tensor, int]]
    negatives: list[tuple[Tensor, int]]

    def validate(self) -> None:
        if not self.positives:
            raise ValueError("anchor has no positive samples")
        if not self.negatives:
            raise ValueError("anchor has no negative samples")
        for z, r in self.positives:
            if r != self.rank:
                raise ValueError(f"positive of rank {r} for anchor of rank {self.rank}")
            if z is self.anchor:
                raise ValueError("the anchor cannot be its own positive")
        for z, r in self.negatives:
            if r == self.rank:
                raise ValueError(f"negative shares the anchor's rank {r}")


def ce_loss(true_label: int, logits: Tensor, n_classes: int | None = None) -> Tensor:
    """Cross-entropy of softmax(logits) against a 1-based rank label."""
    logits = ad.as_tensor(logits)
    C = logits.shape[-1] if n_classes is None else n_classes
    if not 1 <= int(true_label) <= C:
        raise ValueError(f"label {true_label} outside [1, {C}]")
    return ad.softmax_cross_entropy(logits, int(true_label) - 1)


def mmnp_loss(pairs: PairSets, ms: MarginSet) -> Tensor:
    """Sum over (positive, negative) pairs of
    max(0, m_cum(y, y_k) + cos(z, z_k) - cos(z, z_j))."""
    pairs.validate()
    margins = ms.activated()
    pos_sims = [ad.cosine_similarity(pairs.anchor, zj) for zj, _ in pairs.positives]
    total = None
    for zk, yk in pairs.negatives:
        base = ad.add(cumulative_margin(ms, pairs.rank, yk, margins),
                      ad.cosine_similarity(pairs.anchor, zk))
        for sj in pos_sims:
            term = ad.hinge(ad.sub(base, sj))
            total = term if total is None else ad.add(total, term)
    return total


def batch_pair_sets(z: Tensor | np.ndarray, labels: Sequence[int]) -> list[PairSets]:
    """Per-anchor pair sets formed inside a batch (rows of ``z``)."""
    z = ad.as_tensor(z)
    labels = [int(l) for l in labels]
    rows = [ad.reshape(ad.take(z, np.arange(i * z.shape[1], (i + 1) * z.shape[1])), (z.shape[1],))
            for i in range(z.shape[0])]
    out = []
    for i, y in enumerate(labels):
        pos = [(rows[j], labels[j]) for j in range(len(labels)) if j != i and labels[j] == y]
        neg = [(rows[k], labels[k]) for k in range(len(labels)) if labels[k] != y]
        out.append(PairSets(rows[i], y, pos, neg))
    return out


class TripletIndex:
    """Flat index of every valid (anchor, positive, negative) triple in a batch.

    Precomputed with numpy so the differentiable loss is three gathers, one
    matmul for the cumulative margins, a hinge, and one matmul to sum the
    terms per anchor.
    """

    def __init__(self, labels: Sequence[int], n_classes: int):
        y = np.asarray(labels, dtype=np.intp)
        n = y.size
        same = y[:, None] == y[None, :]
        pos = same & ~np.eye(n, dtype=bool)
        neg = ~same
        # all (i, j, k) with pos[i, j] and neg[i, k]
        i, j, k = np.nonzero(pos[:, :, None] & neg[:, None, :])
        self.n = n
        self.anchor = i
        self.ij = i * n + j
        self.ik = i * n + k
        lo = np.minimum(y[i], y[k])
        hi = np.maximum(y[i], y[k])
        h = np.arange(1, n_classes)
        # boundary h lies between ranks lo and hi when lo <= h < hi
        self.path = ((lo[:, None] <= h[None, :]) & (h[None, :] < hi[:, None])).astype(np.float64)
        self.assign = np.zeros((n, i.size))
        self.assign[i, np.arange(i.size)] = 1.0
        self.n_pos = pos.sum(axis=1)
        self.n_neg = neg.sum(axis=1)

    def __len__(self):
        return int(self.anchor.size)


def mmnp_batch(z: Tensor, labels: Sequence[int], margins: Tensor, index: TripletIndex | None = None) -> Tensor:
    """Per-anchor loss vector (n,) with every batch row used as anchor once."""
    C = margins.shape[0] + 1
    if index is None:
        index = TripletIndex(labels, C)
    if np.any(index.n_pos == 0) or np.any(index.n_neg == 0):
        raise ValueError("every anchor needs at least one positive and one negative in the batch")
    sim = ad.pairwise_cosine(z)
    terms = ad.add(ad.matmul(Tensor(index.path), margins), ad.take(sim, index.ik))
    terms = ad.hinge(ad.sub(terms, ad.take(sim, index.ij)))
    return ad.matmul(Tensor(index.assign), terms)


@dataclass
class ObjectiveParts:
    total: Tensor
    ce: np.ndarray
    mm: np.ndarray


def batch_objective(batch_x: np.ndarray, batch_y: Sequence[int], model, ms: MarginSet,
                    mm_weight: float = 1.0, index: TripletIndex | None = None) -> ObjectiveParts:
    """Mean over anchors of CE + MM; labels are 1-based ranks."""
    y = np.asarray(batch_y, dtype=np.intp)
    z = model.encode(batch_x)
    logits = model.classify(z)
    ce = ad.softmax_cross_entropy(logits, y - 1)
    mm = mmnp_batch(z, y, ms.activated(), index)
    per_anchor = ad.add(ce, ad.mul(mm, float(mm_weight))) if mm_weight != 1.0 else ad.add(ce, mm)
    return ObjectiveParts(ad.mean(per_anchor), ce.data.copy(), mm.data.copy())


# -- reference oracles (plain floats, no autodiff) -----------------------------

def _cos(a, b) -> float:
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return num / (na * nb)


def mmnp_oracle(anchor, rank, positives, negatives, margins) -> float:
    """Triple-loop evaluation of the multi-margin n-pair loss.

    ``positives``/``negatives`` are lists of (vector, rank); ``margins`` the
    C-1 adjacent margins as plain numbers.
    """
    a = [float(v) for v in np.asarray(anchor).ravel()]
    total = 0.0
    for zj, _ in positives:
        pos = _cos(a, [float(v) for v in np.asarray(zj).ravel()])
        for zk, rk in negatives:
            lo, hi = min(rank, rk), max(rank, rk)
            cum = 0.0
            for h in range(lo, hi):
                cum += float(margins[h - 1])
            neg = _cos(a, [float(v) for v in np.asarray(zk).ravel()])
            total += max(0.0, cum + neg - pos)
    return total


def batch_mmnp_oracle(z, labels, margins) -> list[float]:
    z = np.asarray(z, dtype=np.float64)
    out = []
    for i in range(len(labels)):
        pos = [(z[j], labels[j]) for j in range(len(labels)) if j != i and labels[j] == labels[i]]
        neg = [(z[k], labels[k]) for k in range(len(labels)) if labels[k] != labels[i]]
        out.append(mmnp_oracle(z[i], labels[i], pos, neg, margins))
    return out


def ce_oracle(label: int, logits) -> float:
    """-log softmax(logits)[label-1] by direct summation."""
    v = [float(x) for x in np.asarray(logits).ravel()]
    return -math.log(math.exp(v[label - 1]) / sum(math.exp(x) for x in v))
