"""Covariate matching of label distributions across decoder splits.

Every split is given as an array of class labels; the functions return
positions into those arrays, so matched rows are never copied.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError


@dataclass(frozen=True)
class MatchedSplits:
    """Matched positions for every split.

    ``train_rows`` may repeat positions (oversampling); ``test_rows`` are
    unique and sorted ascending.
    """

    train_rows: tuple[np.ndarray, ...]
    test_rows: tuple[np.ndarray, ...]
    per_class_test_count: int
    per_class_train_count: tuple[int, ...]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def count_table(splits: Sequence[np.ndarray], n_classes: int) -> np.ndarray:
    """``(n_splits, n_classes)`` array of label counts."""
    out = np.zeros((len(splits), n_classes), dtype=np.int64)
    for s, labels in enumerate(splits):
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError(f"split {s} has labels outside 0..{n_classes - 1}")
        out[s] = np.bincount(labels, minlength=n_classes)
    return out


def _check_present(counts: np.ndarray, what: str) -> None:
    zero = np.argwhere(counts == 0)
    if zero.size:
        s, j = zero[0]
        raise InfeasibleError(f"class {int(j)} is absent from {what} split {int(s)}")


def match_train(splits: Sequence[np.ndarray], n_classes: int, seed=None) -> tuple[list[np.ndarray], np.ndarray]:
    """Subsample every training split to common class counts, then oversample.

    For class ``j`` the matched count is ``m_j = min_s count[s, j]``; each
    split draws ``m_j`` of its class-``j`` positions without replacement.
    Minority classes are then topped up to ``max_j m_j`` by drawing with
    replacement from the rows just selected.

    Returns
    -------
    rows : list of position arrays, one per split, each of length
        ``n_classes * max_j m_j``
    matched : the vector ``m``
    """
    rng = _rng(seed)
    counts = count_table(splits, n_classes)
    _check_present(counts, "training")
    matched = counts.min(axis=0)
    target = int(matched.max())
    out = []
    for labels in splits:
        labels = np.asarray(labels)
        parts = []
        for j in range(n_classes):
            pool = np.flatnonzero(labels == j)
            drawn = rng.choice(pool, size=int(matched[j]), replace=False)
            extra = rng.choice(drawn, size=target - drawn.size, replace=True)
            parts.append(drawn)
            parts.append(extra)
        out.append(np.concatenate(parts).astype(np.int64))
    return out, matched


def match_test(splits: Sequence[np.ndarray], n_classes: int, seed=None) -> tuple[list[np.ndarray], int]:
    """Subsample every test split to ``m`` unique rows per class.

    ``m`` is the smallest class count over all splits.  Returned positions
    are sorted, which keeps them in time order.
    """
    rng = _rng(seed)
    counts = count_table(splits, n_classes)
    m = int(counts.min()) if counts.size else 0
    if m == 0:
        _check_present(counts, "test")
        raise InfeasibleError("no test rows to match")
    out = []
    for labels in splits:
        labels = np.asarray(labels)
        parts = [rng.choice(np.flatnonzero(labels == j), size=m, replace=False) for j in range(n_classes)]
        out.append(np.sort(np.concatenate(parts)).astype(np.int64))
    return out, m


def match_splits(
    train: Sequence[np.ndarray],
    test: Sequence[np.ndarray],
    n_classes: int,
    seed=None,
) -> MatchedSplits:
    """Run :func:`match_train` and :func:`match_test` with one generator."""
    rng = _rng(seed)
    train_rows, matched = match_train(train, n_classes, rng)
    test_rows, m = match_test(test, n_classes, rng)
    return MatchedSplits(
        train_rows=tuple(train_rows),
        test_rows=tuple(test_rows),
        per_class_test_count=m,
        per_class_train_count=tuple(int(x) for x in matched),
    )
