"""Split one context's subdatasets into two independent parts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SessionDataset, SplitSpec
from .errors import InfeasibleError


@dataclass(frozen=True)
class Partition:
    """Result of :func:`partition_subdatasets`.

    ``alpha_ids`` is the training side.  ``fallback`` is set when no prefix
    reached the requested proportion and the closest one was used instead.
    """

    alpha_ids: tuple[int, ...]
    beta_ids: tuple[int, ...]
    achieved_proportion: float
    score: float
    fallback: bool = False
    order: tuple[int, ...] = ()


def class_counts(
    ds: SessionDataset,
    context: str,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-subdataset per-class row counts for ``context``.

    Returns ``(ids, counts)`` where ``counts[k, j]`` is the number of usable
    rows of class ``j`` in subdataset ``ids[k]``.
    """
    keep = ds.context == context
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    ids = ds.subdatasets(context)
    pos = np.searchsorted(ids, ds.subdataset[keep])
    counts = np.zeros((ids.size, ds.n_classes), dtype=np.int64)
    np.add.at(counts, (pos, ds.location[keep]), 1)
    return ids, counts


def choose_prefix(counts: np.ndarray, p_alpha: float) -> tuple[int, float, float, bool]:
    """Pick the prefix length of an already permuted count table.

    Only proper prefixes ``1..n-1`` are considered.  Returns
    ``(length, proportion, score, fallback)``.
    """
    n = counts.shape[0]
    if n < 2:
        raise InfeasibleError("at least two subdatasets are needed to partition")
    total = counts.sum(axis=0)
    cum = np.cumsum(counts, axis=0)[:-1]
    min_a = cum.min(axis=1).astype(float)
    min_b = (total - cum).min(axis=1).astype(float)
    denom = min_a + min_b
    with np.errstate(invalid="ignore", divide="ignore"):
        prop = np.where(denom > 0, min_a / np.where(denom > 0, denom, 1.0), 0.0)
    score = prop - p_alpha
    ok = np.flatnonzero(score >= 0)
    if ok.size:
        k = ok[np.argmin(score[ok])]
        fallback = False
    else:
        k = int(np.argmin(np.abs(score)))
        fallback = True
    return int(k) + 1, float(prop[k]), float(score[k]), fallback


def partition_subdatasets(
    ds: SessionDataset,
    context: str,
    spec: SplitSpec,
    mask: np.ndarray | None = None,
) -> Partition:
    """Randomly order the subdatasets of ``context`` and cut at the best prefix.

    The size of a part is the minimum per-class count over its rows, and the
    achieved proportion is ``min(n_a) / (min(n_a) + min(n_b))``.  The prefix
    whose proportion exceeds ``spec.proportion_alpha`` by the least is
    chosen; if none reaches it, the prefix closest to it is used and
    ``fallback`` is set.

    Parameters
    ----------
    mask : optional boolean array over timepoints selecting usable rows
        (for example rows with a complete lag window in a moving stratum).

    Raises
    ------
    InfeasibleError
        If the context has fewer than two subdatasets or lacks a class.
    """
    ids, counts = class_counts(ds, context, mask)
    if ids.size < 2:
        raise InfeasibleError(f"context {context!r} has {ids.size} subdataset(s); need at least 2")
    missing = np.flatnonzero(counts.sum(axis=0) == 0)
    if missing.size:
        raise InfeasibleError(f"class {int(missing[0])} is absent from context {context!r}")

    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(ids.size)
    k, prop, score, fallback = choose_prefix(counts[perm], spec.proportion_alpha)
    order = ids[perm]
    return Partition(
        alpha_ids=tuple(sorted(int(i) for i in order[:k])),
        beta_ids=tuple(sorted(int(i) for i in order[k:])),
        achieved_proportion=prop,
        score=score,
        fallback=fallback,
        order=tuple(int(i) for i in order),
    )
