"""Variance inflation from the autocovariance of decoder errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class VifEstimate:
    """``autocovariance[i]`` is the lag-``i`` autocovariance, ``i = 0..T-1``.

    ``saturated`` means no non-positive lag was found and ``k_hat = T - 1``;
    ``degenerate`` means the error vector was constant.
    """

    k_hat: int
    autocovariance: np.ndarray
    k_min: int = 1
    saturated: bool = False
    degenerate: bool = False


def autocovariance(errors: np.ndarray) -> np.ndarray:
    """``gamma_i = 1/(T-i) * sum_t (E_{t+i} - mean)(E_t - mean)`` for ``i = 0..T-1``."""
    e = np.asarray(errors, dtype=float)
    d = e - e.mean()
    n = d.size
    raw = np.correlate(d, d, mode="full")[n - 1:]
    return raw / (n - np.arange(n))


def estimate_vif(errors, k_min: int = 1) -> VifEstimate:
    """Smallest lag ``i >= k_min`` at which the error autocovariance is ``<= 0``.

    Parameters
    ----------
    errors : binary sequence of per-row decoding errors, in time order
    k_min : smallest admissible inflation factor
    """
    if k_min < 1:
        raise ValueError("k_min must be at least 1")
    e = np.asarray(errors, dtype=float)
    if e.ndim != 1 or e.size < k_min + 2:
        raise ValueError(f"need at least k_min + 2 = {k_min + 2} errors")
    if not np.all((e == 0) | (e == 1)):
        raise ValueError("errors must be binary")
    gamma = autocovariance(e)
    if np.all(e == e[0]):
        return VifEstimate(k_min, gamma, k_min, degenerate=True)
    hits = np.flatnonzero(gamma[k_min:] <= 0)
    if hits.size == 0:
        return VifEstimate(e.size - 1, gamma, k_min, saturated=True)
    return VifEstimate(int(hits[0]) + k_min, gamma, k_min)


def apply_vif(se: float, k_hat: float) -> float:
    """Scale an independent-sample standard error by ``sqrt(k_hat)``."""
    if k_hat < 1:
        raise ValueError("k_hat must be at least 1")
    return float(se) * float(np.sqrt(k_hat))
