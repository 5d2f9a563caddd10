"""Session datasets, lag-windowed designs and the session CSV format.

A session is a sequence of 40 ms timepoints.  Each timepoint carries one
spike count per neuron, a discretized location label, a movement direction
(``F``, ``B`` or ``none``) and the id of the independent subdataset
(task trial or free-running half) it belongs to.  Every subdataset belongs
to exactly one context, ``task`` or ``fr``.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ContextTagError,
    CountError,
    EmptyDesignError,
    HeaderError,
    LabelRangeError,
    RowLengthError,
    SessionFormatError,
)

CONTEXTS = ("task", "fr")
DIRECTIONS = ("F", "B", "none")
MOVING = ("F", "B")
FIXED_COLUMNS = ("t", "context", "subdataset", "location", "direction")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SessionDataset:
    """Time-indexed spike counts with labels, confound and context tags.

    Parameters
    ----------
    spikes : (T, P) non-negative integer array
    location : (T,) class ids in ``0..n_classes-1``
    direction : (T,) strings from :data:`DIRECTIONS`
    context : (T,) strings from :data:`CONTEXTS`
    subdataset : (T,) integer subdataset ids
    n_classes : number of location classes
    t : (T,) timepoint stamps; defaults to ``arange(T)``
    """

    spikes: np.ndarray
    location: np.ndarray
    direction: np.ndarray
    context: np.ndarray
    subdataset: np.ndarray
    n_classes: int = 3
    t: np.ndarray | None = None

    def __post_init__(self):
        spikes = np.asarray(self.spikes)
        if spikes.ndim != 2:
            raise ValueError("spikes must be a 2-D (T, P) array")
        if spikes.size and not np.issubdtype(spikes.dtype, np.integer):
            if not np.all(np.mod(spikes, 1) == 0):
                raise ValueError("spike counts must be integers")
        spikes = spikes.astype(np.int64, copy=False)
        n = spikes.shape[0]
        location = np.asarray(self.location, dtype=np.int64)
        direction = np.asarray(self.direction, dtype=str)
        context = np.asarray(self.context, dtype=str)
        subdataset = np.asarray(self.subdataset, dtype=np.int64)
        t = np.arange(n, dtype=np.int64) if self.t is None else np.asarray(self.t, dtype=np.int64)
        for name, arr in (("location", location), ("direction", direction),
                          ("context", context), ("subdataset", subdataset), ("t", t)):
            if arr.shape != (n,):
                raise ValueError(f"{name} has length {arr.shape[0] if arr.ndim else 0}, expected {n}")
        if np.any(spikes < 0):
            raise ValueError("spike counts must be non-negative")
        if n and (location.min() < 0 or location.max() >= self.n_classes):
            raise ValueError(f"location labels must lie in 0..{self.n_classes - 1}")
        bad = set(np.unique(direction)) - set(DIRECTIONS)
        if bad:
            raise ValueError(f"unknown direction labels {sorted(bad)}")
        bad = set(np.unique(context)) - set(CONTEXTS)
        if bad:
            raise ValueError(f"unknown context tags {sorted(bad)}")
        for sid in np.unique(subdataset):
            tags = np.unique(context[subdataset == sid])
            if tags.size != 1:
                raise ValueError(f"subdataset {sid} spans contexts {list(tags)}")
        for name, arr in (("spikes", spikes), ("location", location), ("direction", direction),
                          ("context", context), ("subdataset", subdataset), ("t", t)):
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n_timepoints(self) -> int:
        return self.spikes.shape[0]

    @property
    def n_neurons(self) -> int:
        return self.spikes.shape[1]

    def subdatasets(self, context: str | None = None) -> np.ndarray:
        """Sorted subdataset ids, optionally restricted to one context."""
        if context is None:
            return np.unique(self.subdataset)
        return np.unique(self.subdataset[self.context == context])

    def context_of(self, subdataset_id: int) -> str:
        hits = self.context[self.subdataset == subdataset_id]
        if hits.size == 0:
            raise KeyError(subdataset_id)
        return str(hits[0])

    def equals(self, other: SessionDataset) -> bool:
        """Field-by-field equality."""
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.spikes, other.spikes)
            and np.array_equal(self.location, other.location)
            and np.array_equal(self.direction, other.direction)
            and np.array_equal(self.context, other.context)
            and np.array_equal(self.subdataset, other.subdataset)
            and np.array_equal(self.t, other.t)
        )


@dataclass(frozen=True, eq=False)
class WindowedDesign:
    """Lag-stacked features ``[X(t), X(t-1), ..., X(t-lag)]`` with labels.

    ``row_time`` holds the dataset position of each row's target timepoint
    and increases strictly, so sorting row indices sorts by time.
    """

    features: np.ndarray
    labels: np.ndarray
    lag: int
    row_time: np.ndarray
    subdataset: np.ndarray
    n_neurons: int
    n_classes: int = 3
    context: str = ""
    stratum: tuple[str, ...] = field(default=())

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    """Target proportion of data for the first (training) partition."""

    proportion_alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.proportion_alpha < 1.0:
            raise ValueError("proportion_alpha must lie strictly between 0 and 1")


def _as_levels(stratum: str | Iterable[str]) -> tuple[str, ...]:
    if isinstance(stratum, str):
        return (stratum,)
    return tuple(stratum)


def window_valid(ds: SessionDataset, lag: int) -> np.ndarray:
    """Boolean mask of timepoints whose last ``lag`` predecessors share their subdataset run."""
    n = ds.n_timepoints
    if n == 0:
        return np.zeros(0, dtype=bool)
    starts = np.ones(n, dtype=bool)
    starts[1:] = ds.subdataset[1:] != ds.subdataset[:-1]
    run_start = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
    return np.arange(n) - run_start >= lag


def build_windowed(
    ds: SessionDataset,
    lag: int,
    stratum: str | Iterable[str],
    context: str,
) -> WindowedDesign:
    """Stack each timepoint's spike vector with its ``lag`` predecessors.

    Rows are kept for timepoints whose direction is in ``stratum`` and whose
    context is ``context``; a window never reaches across a subdataset
    boundary.  Pass ``("F", "B")`` as the stratum to pool directions.

    Raises
    ------
    EmptyDesignError
        If no timepoint has a complete window.
    """
    if lag < 0:
        raise ValueError("lag must be non-negative")
    levels = _as_levels(stratum)
    for level in levels:
        if level not in ds.direction:
            raise ValueError(f"stratum {level!r} does not occur in the dataset")
    if context not in ds.context:
        raise ValueError(f"context {context!r} does not occur in the dataset")

    keep = np.isin(ds.direction, levels) & (ds.context == context) & window_valid(ds, lag)
    rows = np.flatnonzero(keep)
    if rows.size == 0:
        raise EmptyDesignError(
            f"no rows with a complete lag-{lag} window for context={context!r}, stratum={levels}"
        )
    spikes = ds.spikes.astype(np.int32, copy=False)
    features = np.hstack([spikes[rows - k] for k in range(lag + 1)])
    return WindowedDesign(
        features=_frozen(features),
        labels=_frozen(ds.location[rows]),
        lag=lag,
        row_time=_frozen(rows),
        subdataset=_frozen(ds.subdataset[rows]),
        n_neurons=ds.n_neurons,
        n_classes=ds.n_classes,
        context=context,
        stratum=levels,
    )


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

def _parse_int(text: str, row: int, column: str, exc=CountError) -> int:
    try:
        value = int(text)
    except ValueError:
        raise exc(f"expected an integer, got {text!r}", row=row, column=column) from None
    return value


def load_session(path: str | Path, n_classes: int = 3) -> SessionDataset:
    """Read and validate a session CSV.

    The header must be ``t,context,subdataset,location,direction,n0,...``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderError("empty file", row=1) from None
        header = [h.strip() for h in header]
        if tuple(header[:5]) != FIXED_COLUMNS:
            raise HeaderError(f"header must start with {','.join(FIXED_COLUMNS)}", row=1)
        neuron_cols = header[5:]
        expected = [f"n{i}" for i in range(len(neuron_cols))]
        if neuron_cols != expected:
            raise HeaderError("neuron columns must be named n0, n1, ... in order", row=1)
        width = len(header)

        t, ctx, sub, loc, dirn, counts = [], [], [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise RowLengthError(f"expected {width} fields, got {len(rec)}", row=lineno)
            t.append(_parse_int(rec[0], lineno, "t", SessionFormatError))
            if rec[1] not in CONTEXTS:
                raise ContextTagError(f"unknown context tag {rec[1]!r}", row=lineno, column="context")
            ctx.append(rec[1])
            sub.append(_parse_int(rec[2], lineno, "subdataset", SessionFormatError))
            label = _parse_int(rec[3], lineno, "location", LabelRangeError)
            if not 0 <= label < n_classes:
                raise LabelRangeError(
                    f"location {label} outside 0..{n_classes - 1}", row=lineno, column="location"
                )
            loc.append(label)
            if rec[4] not in DIRECTIONS:
                raise SessionFormatError(f"unknown direction {rec[4]!r}", row=lineno, column="direction")
            dirn.append(rec[4])
            row_counts = []
            for j, text in enumerate(rec[5:]):
                value = _parse_int(text, lineno, f"n{j}")
                if value < 0:
                    raise CountError("spike counts must be non-negative", row=lineno, column=f"n{j}")
                row_counts.append(value)
            counts.append(row_counts)

    spikes = np.asarray(counts, dtype=np.int64).reshape(len(counts), len(neuron_cols))
    try:
        return SessionDataset(
            spikes=spikes, location=np.asarray(loc, dtype=np.int64), direction=np.asarray(dirn, dtype=str),
            context=np.asarray(ctx, dtype=str), subdataset=np.asarray(sub, dtype=np.int64),
            n_classes=n_classes, t=np.asarray(t, dtype=np.int64),
        )
    except ValueError as err:
        raise SessionFormatError(str(err)) from err


def save_session(ds: SessionDataset, path: str | Path) -> None:
    """Write ``ds`` in the session CSV format."""
    path = Path(path)
    header = list(FIXED_COLUMNS) + [f"n{i}" for i in range(ds.n_neurons)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n_timepoints):
            writer.writerow(
                [int(ds.t[i]), ds.context[i], int(ds.subdataset[i]), int(ds.location[i]), ds.direction[i]]
                + ds.spikes[i].tolist()
            )
