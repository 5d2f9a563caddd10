"""Monte Carlo harnesses for type I error and power of every test."""

from __future__ import annotations

import warnings
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .alt_tests import TESTS as ALT_TESTS, run_alt_test
from .decoders import CVConfig
from .divergence import TestConfig, run_context_test
from .errors import InfeasibleError
from .simulator import SimSpec, generate

VIF_VARIANTS = ("fixed", "est")


def xacc_name(decoder: str, variant: str) -> str:
    return f"xacc_{decoder}_{variant}"


def default_tests(decoders: Sequence[str] = ("poisson",), alt: Iterable[str] = ALT_TESTS) -> tuple[str, ...]:
    return tuple(xacc_name(d, v) for d in decoders for v in VIF_VARIANTS) + tuple(alt)


def point_seed(master_seed: int, point: int, k: int) -> int:
    """Seed of simulation ``k`` at grid point ``point``."""
    return int(np.random.SeedSequence(master_seed, spawn_key=(point, k)).generate_state(1)[0])


@dataclass(frozen=True)
class SweepSettings:
    """Shared settings for both sweeps."""

    n_seeds: int = 50
    tests: tuple[str, ...] = default_tests()
    alpha: float = 0.05
    master_seed: int = 0
    n_repetitions: int = 1
    lag: int = 9
    vif: float = 12.0
    strata: str = "location-direction"
    n_subdatasets: int = 10
    cv: CVConfig = CVConfig()
    jobs: int = 1


def _decoders_needed(tests):
    out = []
    for t in tests:
        if t.startswith("xacc_"):
            kind = t.split("_")[1]
            if kind not in out:
                out.append(kind)
    return tuple(out)


def simulate_pvalues(spec: SimSpec, settings: SweepSettings, seed: int) -> dict:
    """p-value of every requested test on one simulated dataset.

    A cross-decoding test whose repetitions are all infeasible yields NaN,
    which counts as a non-rejection.
    """
    ds = generate(replace(spec, seed=seed))
    out = {}
    kinds = _decoders_needed(settings.tests)
    if kinds:
        cfg = TestConfig(lag=settings.lag, decoders=kinds, vif=settings.vif, n_repetitions=settings.n_repetitions,
                         master_seed=seed, cv=settings.cv)
        try:
            res = run_context_test(ds, cfg)
            for kind in kinds:
                rep = res.reports[kind]
                out[xacc_name(kind, "fixed")] = rep.p_fixed_vif
                out[xacc_name(kind, "est")] = rep.p_est_vif
        except InfeasibleError:
            for kind in kinds:
                out[xacc_name(kind, "fixed")] = out[xacc_name(kind, "est")] = float("nan")
    for t in settings.tests:
        if t in ALT_TESTS:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out[t] = run_alt_test(ds, t, settings.strata).corrected_p
    return {t: out[t] for t in settings.tests}


def _job(args):
    spec, settings, seed = args
    return simulate_pvalues(spec, settings, seed)


def _run_points(points: list[tuple[dict, SimSpec]], settings: SweepSettings) -> tuple[list[dict], list[dict]]:
    jobs = [(spec, settings, point_seed(settings.master_seed, i, k))
            for i, (_, spec) in enumerate(points) for k in range(settings.n_seeds)]
    if settings.jobs > 1:
        with ProcessPoolExecutor(max_workers=settings.jobs) as pool:
            pvals = list(pool.map(_job, jobs))
    else:
        pvals = [_job(j) for j in jobs]
    rows, raw = [], []
    for i, (params, _) in enumerate(points):
        block = pvals[i * settings.n_seeds:(i + 1) * settings.n_seeds]
        for k, pv in enumerate(block):
            raw.append({**params, "seed_index": k, "seed": jobs[i * settings.n_seeds + k][2], **pv})
        for t in settings.tests:
            p = np.array([pv[t] for pv in block], dtype=float)
            rejected = int(np.sum(np.nan_to_num(p, nan=1.0) <= settings.alpha))
            rows.append({**params, "test": t, "n_seeds": settings.n_seeds, "n_rejected": rejected,
                         "rate": rejected / settings.n_seeds, "n_failed": int(np.isnan(p).sum())})
    return rows, raw


@dataclass(frozen=True)
class SweepResult:
    """Rejection rates per grid point and test, plus every raw p-value."""

    rows: tuple[dict, ...]
    pvalues: tuple[dict, ...]

    def rate(self, test: str, **params) -> float:
        for r in self.rows:
            if r["test"] == test and all(r[k] == v for k, v in params.items()):
                return r["rate"]
        raise KeyError((test, params))


def sweep_type1(n_both: Sequence[int] = (2, 10, 50), scales: Sequence[float] = (0.05, 2.0),
                settings: SweepSettings = SweepSettings()) -> SweepResult:
    """Null grid: only context-independent location-sensitive neurons."""
    points = []
    for nb in n_both:
        for s in scales:
            spec = SimSpec(n_random=0, n_both=int(nb), n_context=0, scale=float(s),
                           n_subdatasets=settings.n_subdatasets)
            points.append(({"n_both": int(nb), "scale": float(s)}, spec))
    rows, raw = _run_points(points, settings)
    return SweepResult(tuple(rows), tuple(raw))


def sweep_power(n_signal: Sequence[int] = (20, 30, 50), scales: Sequence[float] = (0.5,),
                n_context: Sequence[int] | None = None, n_total: int = 50,
                settings: SweepSettings = SweepSettings()) -> SweepResult:
    """Fixed total signal; context-dependent neurons replace context-independent ones.

    ``n_context`` defaults to ``0, 2, ..., n_signal`` for each signal level.
    """
    points = []
    for ns in n_signal:
        if ns > n_total:
            raise ValueError("n_signal cannot exceed n_total")
        grid = range(0, ns + 1, 2) if n_context is None else [c for c in n_context if c <= ns]
        for nc in grid:
            for s in scales:
                spec = SimSpec(n_random=n_total - ns, n_both=ns - nc, n_context=int(nc), scale=float(s),
                               n_subdatasets=settings.n_subdatasets)
                points.append(({"n_signal": int(ns), "n_context": int(nc), "n_both": ns - nc,
                                "scale": float(s)}, spec))
    rows, raw = _run_points(points, settings)
    return SweepResult(tuple(rows), tuple(raw))


def null_rejection_fraction(n_sims: int = 200, spec: SimSpec = SimSpec(), settings: SweepSettings | None = None,
                            test: str = "xacc_poisson_fixed") -> float:
    """Fraction of null simulations with p <= alpha for one cross-decoding test."""
    settings = settings or SweepSettings(n_seeds=n_sims, tests=(test,))
    settings = replace(settings, n_seeds=n_sims, tests=(test,))
    rows, _ = _run_points([({"n_context": spec.n_context}, spec)], settings)
    return rows[0]["rate"]
