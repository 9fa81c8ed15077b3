"""Stratified k-fold assignment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataIntegrityError
from ..rng import make_rng

STREAM_FOLDS = 201


class SplitError(ConfigError):
    pass


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray      # trial index -> fold index
    seed: int

    def test_indices(self, fold):
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignments != fold)

    def folds(self):
        """Yield ``(fold, train_idx, test_idx)`` with a disjointness check."""
        for f in range(self.k):
            tr, te = self.train_indices(f), self.test_indices(f)
            check_disjoint(tr, te, f"fold {f}")
            yield f, tr, te


def check_disjoint(train_idx, test_idx, what="split"):
    overlap = np.intersect1d(train_idx, test_idx)
    if overlap.size:
        raise DataIntegrityError(f"{what}: {overlap.size} trial(s) in both training and test sets "
                                 f"(first {int(overlap[0])})")


def kfold_split(labels, k=10, seed=0) -> FoldPlan:
    """Seeded stratified assignment of trials to ``k`` folds.

    Within each class the trials are shuffled and dealt round-robin, starting
    at the fold after the one where the previous class stopped, so fold sizes
    and per-class counts both differ by at most one.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise SplitError(f"k-fold evaluation needs k >= 2, got {k}")
    classes, counts = np.unique(labels, return_counts=True)
    for c, n in zip(classes, counts):
        if n < k:
            raise SplitError(f"class {c} has {n} trials, fewer than k={k}")
    rng = make_rng(seed, STREAM_FOLDS)
    assign = np.empty(len(labels), dtype=np.int64)
    start = 0
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        assign[idx] = (start + np.arange(len(idx))) % k
        start = (start + len(idx)) % k
    return FoldPlan(k, assign, seed)


def holdout_split(labels, fraction=0.2, seed=0):
    """Stratified single split; returns ``(train_idx, validation_idx)``."""
    labels = np.asarray(labels)
    if not 0 < fraction < 1:
        raise SplitError("validation fraction must lie in (0, 1)")
    rng = make_rng(seed, STREAM_FOLDS, 1)
    val = []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_val = max(1, int(round(fraction * len(idx))))
        if n_val >= len(idx):
            raise SplitError(f"class {c} has too few trials for a validation split")
        val.extend(idx[:n_val])
    val = np.sort(np.array(val, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(labels)), val)
    return train, val
