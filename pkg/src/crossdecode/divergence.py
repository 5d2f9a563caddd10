"""Cross-context decoding test.

For each repetition the subdatasets of both contexts are split into
training and test parts, label distributions are matched across all
decoders, one decoder is trained per (context, direction) and every decoder
is scored on the test set of its own context and of the other context.
The gap between in-context and cross-context accuracy, over its
conservative standard deviation, gives a one-sided Z-test.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .data import CONTEXTS, MOVING, SessionDataset, SplitSpec, WindowedDesign, build_windowed, window_valid
from .decoders import CVConfig, cross_validate, fit_decoder, tuning_curves
from .errors import ConfigError, DegenerateVarianceError, EmptyDesignError, InfeasibleError
from .matching import match_train, match_test
from .partition import partition_subdatasets
from .vif import apply_vif, autocovariance, estimate_vif

VIF_MODES = ("fixed", "estimated", "none")
ABLATIONS = ("no_matching", "no_stratification")
AUTOCOV_MAX_LAG = 200


# --------------------------------------------------------------------------
# Elementary statistics
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AccuracyEstimate:
    """Empirical accuracy of a decoder on a time-sorted test set."""

    value: float
    se: float
    n_test: int
    error_vector: np.ndarray
    vif: float = 1.0


def accuracy_from_errors(errors: np.ndarray, vif: float = 1.0) -> AccuracyEstimate:
    """Accuracy ``1 - mean(E)`` with ``se = sqrt(vif / n^2 * sum (E - mean)^2)``."""
    if vif < 1:
        raise ValueError("vif must be at least 1")
    e = np.asarray(errors, dtype=np.int8)
    n = e.size
    if n == 0:
        raise ValueError("empty test set")
    mean = e.mean()
    se = math.sqrt(vif * float(np.sum((e - mean) ** 2)) / n**2)
    e.setflags(write=False)
    return AccuracyEstimate(float(1.0 - mean), se, n, e, float(vif))


def accuracy(model, design: WindowedDesign, vif: float = 1.0, rows=None) -> AccuracyEstimate:
    """Score ``model`` on ``design`` (or on ``rows`` of it, which must be time-sorted)."""
    if rows is None:
        X, y = design.features, design.labels
    else:
        rows = np.asarray(rows, dtype=np.int64)
        X, y = design.features[rows], design.labels[rows]
    if y.size == 0:
        raise ValueError("empty test set")
    return accuracy_from_errors(model.predict(X) != y, vif)


def symmetric_divergence(acc_a, acc_b, xacc_ab, xacc_ba) -> tuple[float, float]:
    """``(delta, sigma)`` from two in-context and two cross-context estimates.

    ``delta = (acc_a + acc_b - xacc_ab - xacc_ba) / 2`` and sigma is half the
    sum of the four standard errors.  Arguments may be
    :class:`AccuracyEstimate` instances or ``(value, se)`` pairs.
    """
    vals, ses = [], []
    for a in (acc_a, acc_b, xacc_ab, xacc_ba):
        if isinstance(a, AccuracyEstimate):
            vals.append(a.value)
            ses.append(a.se)
        else:
            vals.append(float(a[0]))
            ses.append(float(a[1]))
    delta = 0.5 * (vals[0] + vals[1] - vals[2] - vals[3])
    return delta, 0.5 * sum(ses)


@dataclass(frozen=True)
class ZTest:
    z: float
    p_value: float
    p_two_sided: float


def combined_z_test(strata: Sequence[tuple[float, float]]) -> ZTest:
    """One-sided ``p = 1 - Phi(sum(delta) / sum(sigma))`` over confound strata.

    Raises
    ------
    DegenerateVarianceError
        If every sigma is zero.
    """
    if len(strata) == 0:
        raise ValueError("at least one stratum is required")
    deltas = np.array([s[0] for s in strata], dtype=float)
    sigmas = np.array([s[1] for s in strata], dtype=float)
    if np.any(sigmas < 0):
        raise ValueError("standard deviations must be non-negative")
    total = sigmas.sum()
    if total == 0:
        raise DegenerateVarianceError("all standard deviations are zero")
    z = float(deltas.sum() / total)
    return ZTest(z, float(norm.sf(z)), float(2 * norm.sf(abs(z))))


def seed_averaged_test(acc_same: float, acc_cross: float, se_same: float, se_cross: float,
                       vif: float = 1.0) -> ZTest:
    """Z-test on seed- and decoder-averaged accuracies.

    ``se_same`` and ``se_cross`` are averaged independent-sample standard
    errors; both are inflated by ``sqrt(vif)``.
    """
    sigma = apply_vif(se_same, vif) + apply_vif(se_cross, vif)
    return combined_z_test([(acc_same - acc_cross, sigma)])


def _p_or_limit(delta: float, sigma: float) -> tuple[float, float, bool]:
    """p-values that tolerate a zero sigma (returned flag marks that case)."""
    if sigma > 0:
        t = combined_z_test([(delta, sigma)])
        return t.p_value, t.p_two_sided, False
    if delta > 0:
        return 0.0, 0.0, True
    if delta < 0:
        return 1.0, 0.0, True
    return 0.5, 1.0, True


# --------------------------------------------------------------------------
# Configuration and report types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TestConfig:
    """Settings for :func:`run_context_test`.

    ``strata`` lists the confound levels that get their own decoders.
    ``ablations`` may contain ``"no_matching"`` and ``"no_stratification"``;
    each triggers an extra pass with that step disabled.
    """

    __test__ = False  # keep pytest from collecting this class

    lag: int = 9
    decoders: tuple[str, ...] = ("poisson",)
    vif_mode: str = "fixed"
    vif: float = 12.0
    k_min: int = 1
    n_repetitions: int = 400
    master_seed: int = 0
    p_alpha: float = 0.5
    cv: CVConfig = field(default_factory=CVConfig)
    strata: tuple[str, ...] = MOVING
    matching: bool = True
    stratify: bool = True
    ablations: tuple[str, ...] = ()
    min_success_fraction: float = 0.9
    jobs: int = 1

    def __post_init__(self):
        if self.lag < 0:
            raise ConfigError("lag must be non-negative")
        if not self.decoders:
            raise ConfigError("at least one decoder kind is required")
        for d in self.decoders:
            if d not in ("poisson", "logistic", "svm"):
                raise ConfigError(f"unknown decoder kind {d!r}")
        if self.vif_mode not in VIF_MODES:
            raise ConfigError(f"vif_mode must be one of {VIF_MODES}")
        if self.vif < 1:
            raise ConfigError("vif must be at least 1")
        if self.n_repetitions < 1:
            raise ConfigError("n_repetitions must be at least 1")
        if not 0 < self.p_alpha < 1:
            raise ConfigError("p_alpha must lie strictly between 0 and 1")
        for a in self.ablations:
            if a not in ABLATIONS:
                raise ConfigError(f"unknown ablation {a!r}")
        if not 0 <= self.min_success_fraction <= 1:
            raise ConfigError("min_success_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class StratumRecord:
    stratum: str
    delta: float
    sigma: float


@dataclass(frozen=True)
class DivergenceReport:
    """Seed-aggregated test result for one decoder kind.

    ``se_same_bar`` and ``se_cross_bar`` are averaged standard errors before
    any inflation.  ``strata`` holds per-stratum averages with sigma already
    inflated per ``vif_mode``, so ``p_value`` equals
    ``1 - Phi(sum(delta) / sum(sigma))`` over them.
    """

    decoder: str
    strata: tuple[StratumRecord, ...]
    vif_mode: str
    vif_used: float
    p_value: float
    p_two_sided: float
    p_fixed_vif: float
    p_est_vif: float
    p_no_vif: float
    est_vif: float
    acc_same_bar: float
    acc_cross_bar: float
    se_same_bar: float
    se_cross_bar: float
    se_same_bar_est: float
    se_cross_bar_est: float
    n_repetitions: int
    n_failed: int
    seeds: tuple[int, ...]
    degenerate_variance: bool = False
    p_no_matching: float | None = None
    p_no_stratification: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strata"] = [asdict(s) for s in self.strata]
        d["seeds"] = list(self.seeds)
        return d


@dataclass(frozen=True)
class AccuracyRecord:
    """One decoder evaluation in one repetition."""

    repetition: int
    seed: int
    decoder: str
    stratum: str
    train_context: str
    test_context: str
    accuracy: float
    se: float
    n_test: int
    k_hat: int


@dataclass(frozen=True)
class RunResult:
    """Everything produced by :func:`run_context_test`."""

    reports: dict
    accuracies: tuple[AccuracyRecord, ...]
    tuning: dict
    autocov: dict
    failures: tuple[tuple[int, int, str], ...]
    hyperparameters: tuple[dict, ...]
    config: TestConfig

    def report(self, decoder: str | None = None) -> DivergenceReport:
        if decoder is None:
            decoder = self.config.decoders[0]
        return self.reports[decoder]


# --------------------------------------------------------------------------
# Pipeline
# --------------------------------------------------------------------------

def repetition_seed(master_seed: int, k: int) -> int:
    """Seed of repetition ``k``; independent of how many repetitions run."""
    return int(np.random.SeedSequence(master_seed, spawn_key=(k,)).generate_state(1)[0])


def _stratum_key(levels: tuple[str, ...]) -> str:
    return "+".join(levels)


def _strata_levels(cfg: TestConfig) -> list[tuple[str, ...]]:
    if cfg.stratify:
        return [(s,) for s in cfg.strata]
    return [tuple(cfg.strata)]


def build_designs(ds: SessionDataset, cfg: TestConfig) -> dict:
    """Windowed design per ``(context, stratum_key)``."""
    out = {}
    for c in CONTEXTS:
        for levels in _strata_levels(cfg):
            out[(c, _stratum_key(levels))] = build_windowed(ds, cfg.lag, levels, c)
    return out


@dataclass(frozen=True)
class _RepOutput:
    k: int
    seed: int
    records: tuple
    tuning: dict
    gamma: dict
    hyper: dict


def _one_repetition(ds: SessionDataset, designs: dict, cfg: TestConfig, k: int) -> _RepOutput:
    seed = repetition_seed(cfg.master_seed, k)
    rng = np.random.default_rng(seed)
    n_c = ds.n_classes
    usable = window_valid(ds, cfg.lag) & np.isin(ds.direction, cfg.strata)
    parts = {}
    for c in CONTEXTS:
        spec = SplitSpec(cfg.p_alpha, seed=int(rng.integers(2**32)))
        parts[c] = partition_subdatasets(ds, c, spec, mask=usable)

    keys = list(designs)
    train_pos, test_pos = {}, {}
    for key in keys:
        d = designs[key]
        part = parts[key[0]]
        train_pos[key] = np.flatnonzero(np.isin(d.subdataset, part.alpha_ids))
        test_pos[key] = np.flatnonzero(np.isin(d.subdataset, part.beta_ids))

    if cfg.matching:
        tr, _ = match_train([designs[key].labels[train_pos[key]] for key in keys], n_c, rng)
        te, _ = match_test([designs[key].labels[test_pos[key]] for key in keys], n_c, rng)
        for i, key in enumerate(keys):
            train_pos[key] = train_pos[key][tr[i]]
            test_pos[key] = test_pos[key][te[i]]
    else:
        for key in keys:
            lab = designs[key].labels
            for name, pos in (("training", train_pos[key]), ("test", test_pos[key])):
                present = np.bincount(lab[pos], minlength=n_c) > 0
                if not present.all():
                    raise InfeasibleError(
                        f"class {int(np.flatnonzero(~present)[0])} absent from {name} rows of {key}")

    cv = replace(cfg.cv, seed=int(rng.integers(2**32)))
    records, tuning, gamma, hyper = [], {}, {}, {}
    for kind in cfg.decoders:
        for key in keys:
            c, st = key
            d = designs[key]
            X, y = d.features[train_pos[key]], d.labels[train_pos[key]]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = cross_validate(d, cv, kind, rows=train_pos[key])
                model = fit_decoder(kind, X, y, n_c, res.params, d.n_neurons, d.lag)
            hyper[f"{kind}/{c}/{st}"] = res.params
            if kind == "poisson":
                tuning[(c, st)] = tuning_curves(model)
            for tc in CONTEXTS:
                td = designs[(tc, st)]
                est = accuracy(model, td, 1.0, rows=test_pos[(tc, st)])
                v = estimate_vif(est.error_vector, cfg.k_min)
                records.append((kind, st, c, tc, est.value, est.se, est.n_test, v.k_hat))
                if tc == c:
                    gamma[(kind, st, c)] = autocovariance(est.error_vector)[: AUTOCOV_MAX_LAG + 1]
    return _RepOutput(k, seed, tuple(records), tuning, gamma, hyper)


def _safe_repetition(args):
    ds, designs, cfg, k = args
    try:
        return _one_repetition(ds, designs, cfg, k)
    except InfeasibleError as err:
        return (k, repetition_seed(cfg.master_seed, k), str(err))


def _run_repetitions(ds, designs, cfg):
    tasks = [(ds, designs, cfg, k) for k in range(cfg.n_repetitions)]
    if cfg.jobs > 1 and cfg.n_repetitions > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_safe_repetition, tasks))
    else:
        results = [_safe_repetition(t) for t in tasks]
    ok = [r for r in results if isinstance(r, _RepOutput)]
    failed = [r for r in results if not isinstance(r, _RepOutput)]
    if len(ok) < max(1, math.ceil(cfg.min_success_fraction * cfg.n_repetitions)):
        msg = failed[0][2] if failed else "no repetitions"
        raise InfeasibleError(
            f"{len(failed)} of {cfg.n_repetitions} repetitions were infeasible (first: {msg})")
    return ok, failed


def _aggregate(kind: str, ok: list, cfg: TestConfig):
    recs = [r for out in ok for r in out.records if r[0] == kind]
    same = [r for r in recs if r[2] == r[3]]
    cross = [r for r in recs if r[2] != r[3]]
    acc_s = float(np.mean([r[4] for r in same]))
    acc_x = float(np.mean([r[4] for r in cross]))
    se_s = float(np.mean([r[5] for r in same]))
    se_x = float(np.mean([r[5] for r in cross]))
    se_s_est = float(np.mean([apply_vif(r[5], r[7]) for r in same]))
    se_x_est = float(np.mean([apply_vif(r[5], r[7]) for r in cross]))
    est_vif = float(np.median([r[7] for r in same]))

    diff = acc_s - acc_x
    p_fixed, _, deg_f = _p_or_limit(diff, math.sqrt(cfg.vif) * (se_s + se_x))
    p_est, _, deg_e = _p_or_limit(diff, se_s_est + se_x_est)
    p_none, _, deg_n = _p_or_limit(diff, se_s + se_x)

    def scale(r):
        if cfg.vif_mode == "fixed":
            return apply_vif(r[5], cfg.vif)
        if cfg.vif_mode == "estimated":
            return apply_vif(r[5], r[7])
        return r[5]

    strata = []
    for st in sorted({r[1] for r in recs}):
        rs = [r for r in recs if r[1] == st]
        n_rep = len(ok)
        # per repetition delta sums two same minus two cross, halved
        delta = 0.5 * (sum(r[4] for r in rs if r[2] == r[3]) - sum(r[4] for r in rs if r[2] != r[3])) / n_rep
        sigma = 0.5 * sum(scale(r) for r in rs) / n_rep
        strata.append(StratumRecord(st, float(delta), float(sigma)))
    total_sigma = sum(s.sigma for s in strata)
    p_main, p_two, deg = _p_or_limit(sum(s.delta for s in strata), total_sigma)
    vif_used = {"fixed": cfg.vif, "estimated": est_vif, "none": 1.0}[cfg.vif_mode]
    return dict(
        decoder=kind, strata=tuple(strata), vif_mode=cfg.vif_mode, vif_used=float(vif_used),
        p_value=p_main, p_two_sided=p_two, p_fixed_vif=p_fixed, p_est_vif=p_est, p_no_vif=p_none,
        est_vif=est_vif, acc_same_bar=acc_s, acc_cross_bar=acc_x, se_same_bar=se_s, se_cross_bar=se_x,
        se_same_bar_est=se_s_est, se_cross_bar_est=se_x_est, degenerate_variance=bool(deg or deg_f),
    )


def _main_pass(ds: SessionDataset, cfg: TestConfig):
    try:
        designs = build_designs(ds, cfg)
    except EmptyDesignError as err:
        raise InfeasibleError(str(err)) from err
    ok, failed = _run_repetitions(ds, designs, cfg)
    return ok, failed


def run_context_test(ds: SessionDataset, cfg: TestConfig | None = None) -> RunResult:
    """Repeat partition, matching, fitting and scoring and aggregate the results.

    Repetitions whose partition or matching is infeasible are recorded and
    excluded.  If fewer than ``min_success_fraction`` of them succeed an
    :class:`InfeasibleError` is raised.
    """
    cfg = cfg or TestConfig()
    for level in cfg.strata:
        if level not in ds.direction:
            raise InfeasibleError(f"stratum {level!r} does not occur in the dataset")
    for c in CONTEXTS:
        if c not in ds.context:
            raise InfeasibleError(f"context {c!r} does not occur in the dataset")

    ok, failed = _main_pass(ds, cfg)
    extra = {}
    if "no_matching" in cfg.ablations:
        extra["p_no_matching"] = _main_pass(ds, replace(cfg, matching=False, ablations=()))[0]
    if "no_stratification" in cfg.ablations:
        extra["p_no_stratification"] = _main_pass(ds, replace(cfg, stratify=False, ablations=()))[0]

    seeds = tuple(out.seed for out in ok)
    reports = {}
    for kind in cfg.decoders:
        fields = _aggregate(kind, ok, cfg)
        for name, outs in extra.items():
            fields[name] = _aggregate(kind, outs, cfg)["p_value"]
        reports[kind] = DivergenceReport(n_repetitions=cfg.n_repetitions, n_failed=len(failed), seeds=seeds, **fields)

    accs = tuple(
        AccuracyRecord(out.k, out.seed, *r[:4], float(r[4]), float(r[5]), int(r[6]), int(r[7]))
        for out in ok for r in out.records
    )
    tuning = {}
    for key in ok[0].tuning:
        tuning[key] = np.mean([out.tuning[key] for out in ok], axis=0)
    return RunResult(
        reports=reports, accuracies=accs, tuning=tuning, autocov=ok[0].gamma,
        failures=tuple(failed), hyperparameters=tuple(out.hyper for out in ok), config=cfg,
    )
