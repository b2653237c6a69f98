"""N-pair style mini-batches: several ranks per batch, several samples per rank."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class UnsatisfiableBatchSpec(ValueError):
    """The data cannot produce batches with the required anchor structure."""


@dataclass(frozen=True)
class BatchSpec:
    ranks_per_batch: int | None = None  # None: every rank present in the data
    samples_per_rank: int = 4

    def __post_init__(self):
        if self.ranks_per_batch is not None and self.ranks_per_batch < 2:
            raise ValueError("ranks_per_batch must be >= 2")
        if self.samples_per_rank < 2:
            raise ValueError("samples_per_rank must be >= 2")


def build_batches(labels, spec: BatchSpec, seed=None) -> list[np.ndarray]:
    """One epoch of batches as index arrays into ``labels`` (1-based ranks).

    Every sample appears at least once. Each class is shuffled and cut into
    groups of ``samples_per_rank``; short groups are topped up from the same
    class (with replacement only when the class is smaller than a group).
    A batch joins groups from ``ranks_per_batch`` distinct classes.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    sizes = {int(c): int(np.sum(labels == c)) for c in classes}
    if sum(1 for n in sizes.values() if n >= 2) < 2:
        raise UnsatisfiableBatchSpec("need at least two ranks with two or more samples each")
    k = spec.samples_per_rank
    r = len(classes) if spec.ranks_per_batch is None else spec.ranks_per_batch
    if r > len(classes):
        logger.warning("ranks_per_batch=%d exceeds the %d ranks present; using %d", r, len(classes), len(classes))
        r = len(classes)

    groups: dict[int, list[np.ndarray]] = {}
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        if idx.size < k:
            logger.warning("rank %d has %d samples (< %d); padding by sampling with replacement",
                           c, idx.size, k)
        groups[int(c)] = [_fill_group(idx[s:s + k], idx, k, rng) for s in range(0, idx.size, k)]

    batches: list[np.ndarray] = []
    if r == len(classes):
        n_batches = max(len(g) for g in groups.values())
        for c, g in groups.items():
            while len(g) < n_batches:
                idx = np.flatnonzero(labels == c)
                g.append(_fill_group(rng.permutation(idx)[:k], idx, k, rng))
        for b in range(n_batches):
            batches.append(np.concatenate([groups[int(c)][b] for c in classes]))
        return batches

    remaining = {c: list(g) for c, g in groups.items()}
    while any(remaining.values()):
        order = sorted(remaining, key=lambda c: (-len(remaining[c]), rng.random()))
        pick = [c for c in order if remaining[c]][:r]
        parts = [remaining[c].pop() for c in pick]
        if len(pick) < r:
            # too few classes left; borrow fresh groups from others
            others = [c for c in groups if c not in pick]
            for c in rng.permutation(others)[: r - len(pick)]:
                idx = np.flatnonzero(labels == c)
                parts.append(_fill_group(rng.permutation(idx)[:k], idx, k, rng))
        batches.append(np.concatenate(parts))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _fill_group(group: np.ndarray, pool: np.ndarray, k: int, rng) -> np.ndarray:
    if group.size >= k:
        return group
    rest = np.setdiff1d(pool, group)
    if rest.size >= k - group.size:
        extra = rng.choice(rest, size=k - group.size, replace=False)
    else:
        extra = rng.choice(pool, size=k - group.size, replace=True)
    return np.concatenate([group, extra])


def check_batch(batch_labels) -> list[str]:
    """Structural problems of one batch; an empty list means valid."""
    y = np.asarray(batch_labels)
    problems = []
    ranks, counts = np.unique(y, return_counts=True)
    if ranks.size < 2:
        problems.append(f"only {ranks.size} rank(s) present")
    for r, n in zip(ranks, counts):
        if n < 2:
            problems.append(f"rank {r} has {n} item(s)")
    for i, yi in enumerate(y):
        n_pos = int(np.sum(y == yi)) - 1
        n_neg = int(np.sum(y != yi))
        if n_pos < 1 or n_neg < 2:
            problems.append(f"anchor {i} (rank {yi}) has {n_pos} positives and {n_neg} negatives")
            break
    return problems


def epoch_seed(seed, phase: int, epoch: int):
    return None if seed is None else [int(seed), int(phase), int(epoch)]
