"""Forward / backward / no-movement labels from a raw 1-D trajectory.

The trajectory is smoothed with a Savitzky-Golay filter, velocities are
thresholded, and the series is cut at peaks and troughs of the smoothed
curve.  Each segment is then forced to a single label.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks, savgol_filter

LABEL_NAMES = {1: "F", -1: "B", 0: "none"}


@dataclass(frozen=True)
class LabelerConfig:
    sg_window: int = 251
    sg_order: int = 2
    velocity_threshold: float = 0.1
    peak_prominence: float = 1.0
    mixing_ratio_cutoff: float = 0.5

    def __post_init__(self):
        if self.sg_window % 2 == 0:
            raise ValueError("sg_window must be odd")
        if self.sg_window <= self.sg_order:
            raise ValueError("sg_window must exceed sg_order")
        if self.velocity_threshold <= 0:
            raise ValueError("velocity_threshold must be positive")


class WindowShrunkWarning(UserWarning):
    pass


def smooth(raw, cfg: LabelerConfig = LabelerConfig()) -> np.ndarray:
    """Savitzky-Golay smoothing; edges use a polynomial fit on the end window.

    A series shorter than the window is smoothed with the largest odd window
    that fits, and a :class:`WindowShrunkWarning` is issued.
    """
    x = np.asarray(raw, dtype=float)
    window = cfg.sg_window
    if x.size < window:
        window = x.size if x.size % 2 else x.size - 1
        if window <= cfg.sg_order:
            warnings.warn("series too short to smooth; returned unchanged", WindowShrunkWarning, stacklevel=2)
            return x.copy()
        warnings.warn(f"sg_window shrunk from {cfg.sg_window} to {window}", WindowShrunkWarning, stacklevel=2)
    return savgol_filter(x, window, cfg.sg_order, mode="interp")


def velocity(smoothed) -> np.ndarray:
    """Forward difference with the last value repeated."""
    s = np.asarray(smoothed, dtype=float)
    if s.size < 2:
        return np.zeros(s.size)
    v = np.diff(s)
    return np.append(v, v[-1])


def threshold_velocity(smoothed, tau: float) -> np.ndarray:
    """``1`` where velocity exceeds ``tau``, ``-1`` below ``-tau``, else ``0``."""
    v = velocity(smoothed)
    out = np.zeros(v.size, dtype=np.int8)
    out[v > tau] = 1
    out[v < -tau] = -1
    return out


def segment_bounds(smoothed, prominence: float) -> np.ndarray:
    """Start indices of segments delimited by peaks and troughs (plus the ends)."""
    s = np.asarray(smoothed, dtype=float)
    peaks, _ = find_peaks(s, prominence=prominence)
    troughs, _ = find_peaks(-s, prominence=prominence)
    cuts = np.unique(np.concatenate([[0], peaks, troughs, [s.size]]))
    return cuts


def segment_and_filter(smoothed, labels, cfg: LabelerConfig = LabelerConfig()) -> np.ndarray:
    """Make labels constant within each peak-to-trough segment.

    If the minority/majority count ratio of a segment is below the cutoff
    the whole segment takes the majority label; otherwise it takes the sign
    of the segment's mean velocity, or ``0`` when that is within the
    threshold.
    """
    s = np.asarray(smoothed, dtype=float)
    lab = np.asarray(labels, dtype=np.int8)
    if lab.shape != s.shape:
        raise ValueError("labels and smoothed trajectory differ in length")
    v = velocity(s)
    out = lab.copy()
    cuts = segment_bounds(s, cfg.peak_prominence)
    for a, b in zip(cuts[:-1], cuts[1:]):
        seg = lab[a:b]
        levels = np.array([-1, 0, 1])
        counts = np.array([(seg == k).sum() for k in levels])
        order = np.argsort(-counts, kind="stable")
        top, second = counts[order[0]], counts[order[1]]
        if second / top < cfg.mixing_ratio_cutoff:
            out[a:b] = levels[order[0]]
        else:
            m = v[a:b].mean()
            out[a:b] = 0 if abs(m) <= cfg.velocity_threshold else int(np.sign(m))
    return out


def label_directions(raw, cfg: LabelerConfig = LabelerConfig()) -> np.ndarray:
    """Full pipeline returning integer labels in ``{-1, 0, 1}``."""
    s = smooth(raw, cfg)
    return segment_and_filter(s, threshold_velocity(s, cfg.velocity_threshold), cfg)


def to_names(labels) -> np.ndarray:
    """Map ``1, -1, 0`` to ``F, B, none``."""
    lab = np.asarray(labels)
    return np.array([LABEL_NAMES[int(k)] for k in lab], dtype=str)


def segments(smoothed, prominence: float) -> list[tuple[int, int]]:
    cuts = segment_bounds(smoothed, prominence)
    return [(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:])]
