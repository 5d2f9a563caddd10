import warnings

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import cdist

from crossdecode.alt_tests import (
    StratifiedSamples,
    StratumSkippedWarning,
    bonferroni,
    chi2_test,
    dcorr_statistic,
    dcorr_two_sample,
    hotelling_t2,
    ks_statistic,
    ks_test,
    mmd_statistic,
    mmd_two_sample,
    run_alt_test,
    stratify,
    t_test,
    unbiased_dcorr,
)
from crossdecode.errors import InfeasibleError
from crossdecode.simulator import SimSpec, generate

from conftest import make_dataset


# --- univariate ----------------------------------------------------------------

def test_t_identical_and_degenerate():
    assert t_test([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    assert t_test([0, 0], [1, 1])[1] == 0.0
    assert t_test([2, 2], [2, 2]) == (0.0, 1.0)


def test_t_direct_formula():
    x, y = np.array([1.0, 2, 3]), np.array([2.0, 3, 4])
    sp = np.sqrt(((x - x.mean()) ** 2).sum() / 4 + ((y - y.mean()) ** 2).sum() / 4)
    t = (x.mean() - y.mean()) / (sp * np.sqrt(2 / 3))
    assert t == pytest.approx(-1 / np.sqrt(2 / 3))
    got = t_test(x, y)
    assert got[0] == pytest.approx(t)
    ref = stats.ttest_ind(x, y)
    assert got[1] == pytest.approx(ref.pvalue)


def test_ks_examples():
    assert ks_test([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    assert ks_statistic([0, 1], [5, 6]) == 1.0
    assert ks_statistic([1, 2, 3, 4], [3, 4, 5, 6]) == 0.5


def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.poisson(2, 40)
        y = rng.poisson(2.5, 55)
        assert ks_statistic(x, y) == pytest.approx(stats.ks_2samp(x, y).statistic)


def test_chi2_examples():
    assert chi2_test([0, 1, 2, 0], [0, 1, 2, 0]) == (0.0, 1.0)
    # x ten zeros and twenty ones, y twenty zeros and ten ones
    x = np.r_[np.zeros(10, int), np.ones(20, int)]
    y = np.r_[np.zeros(20, int), np.ones(10, int)]
    obs = np.array([[10, 20], [20, 10]], float)
    exp = np.full((2, 2), 15.0)
    hand = ((obs - exp) ** 2 / exp).sum()
    stat, p = chi2_test(x, y)
    assert stat == pytest.approx(hand) and hand == pytest.approx(20 / 3)
    assert p == pytest.approx(stats.chi2.sf(hand, 1))
    ps = [chi2_test(np.zeros(n, int), np.ones(n, int))[1] for n in (5, 20, 80)]
    assert ps[0] > ps[1] > ps[2]


def test_chi2_matches_scipy_contingency():
    rng = np.random.default_rng(2)
    x, y = rng.poisson(1.5, 100), rng.poisson(1.5, 80)
    vals = np.union1d(x, y)
    table = np.array([[np.sum(x == v) for v in vals], [np.sum(y == v) for v in vals]])
    ref = stats.chi2_contingency(table, correction=False)
    stat, p = chi2_test(x, y)
    assert stat == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue)


# --- Hotelling -------------------------------------------------------------------

def test_hotelling_identical():
    X = np.random.default_rng(0).normal(size=(20, 3))
    r = hotelling_t2(X, X)
    assert r.t2 == pytest.approx(0.0, abs=1e-20) and r.p_value == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_hotelling_univariate_reduction(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=17), rng.normal(0.5, size=23)
    r = hotelling_t2(x[:, None], y[:, None])
    t, p = t_test(x, y)
    assert abs(r.t2 - t * t) <= 1e-10
    assert r.p_value == pytest.approx(p, rel=1e-8)


def test_hotelling_naive_oracle():
    rng = np.random.default_rng(4)
    X, Y = rng.normal(size=(15, 3)), rng.normal(size=(12, 3))
    S = ((len(X) - 1) * np.cov(X.T) + (len(Y) - 1) * np.cov(Y.T)) / (len(X) + len(Y) - 2)
    d = X.mean(0) - Y.mean(0)
    t2 = 15 * 12 / 27 * d @ np.linalg.inv(S) @ d
    assert hotelling_t2(X, Y).t2 == pytest.approx(t2)


def test_hotelling_ridge_flag():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 2))
    Y = rng.normal(size=(20, 2))
    r = hotelling_t2(np.c_[X, X[:, 0]], np.c_[Y, Y[:, 0]])
    assert r.ridge and np.isfinite(r.t2)


# --- distance correlation --------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_fast_dcorr_equals_matrix_form(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(13, 2)), rng.normal(0.3, size=(9, 2))
    W = np.vstack([X, Y])
    g = np.r_[np.zeros(13), np.ones(9)]
    B = (g[:, None] != g[None, :]).astype(float)
    assert dcorr_statistic(X, Y) == pytest.approx(unbiased_dcorr(cdist(W, W), B), abs=1e-12)


def test_dcorr_permuted_labels_near_zero():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(60, 2))
    stats_ = [dcorr_statistic(*np.split(rng.permutation(W), [30])) for _ in range(200)]
    assert np.mean(np.abs(stats_)) < 3 / np.sqrt(60)


def test_dcorr_separated_masses():
    X, Y = np.zeros((10, 1)), np.full((10, 1), 10.0)
    stat, p = dcorr_two_sample(X, Y, permutations=200, seed=0)
    assert p < 0.01
    assert dcorr_two_sample(X, Y)[1] < 0.01


# --- MMD -------------------------------------------------------------------------

def _naive_mmd(X, Y, h):
    k = lambda A, B: np.exp(-cdist(A, B) ** 2 / (2 * h * h))
    Kx, Ky, Kxy = k(X, X), k(Y, Y), k(X, Y)
    m, n = len(X), len(Y)
    return ((Kx.sum() - np.trace(Kx)) / (m * (m - 1)) + (Ky.sum() - np.trace(Ky)) / (n * (n - 1))
            - 2 * Kxy.mean())


def test_mmd_hand_case():
    assert mmd_statistic(np.zeros((2, 1)), np.zeros((2, 1))) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_mmd_naive(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(11, 3)), rng.normal(size=(8, 3))
    assert mmd_statistic(X, Y, bandwidth=1.3) == pytest.approx(_naive_mmd(X, Y, 1.3), abs=1e-12)


def test_mmd_unbiased_under_null():
    rng = np.random.default_rng(0)
    vals = [mmd_statistic(rng.normal(size=(50, 2)), rng.normal(size=(50, 2)), 1.0) for _ in range(60)]
    se = np.std(vals) / np.sqrt(len(vals))
    assert abs(np.mean(vals)) <= 3 * se


def test_mmd_separated_clusters():
    rng = np.random.default_rng(1)
    X = rng.normal(0, 1e-4, size=(20, 2))
    Y = rng.normal(50, 1e-4, size=(20, 2))
    stat, p = mmd_two_sample(X, Y, bandwidth=1.0)
    assert stat == pytest.approx(2.0, abs=1e-6)
    assert p < 0.01
    assert mmd_two_sample(X, Y, bandwidth=1.0, permutations=100)[1] < 0.02


# --- driver ----------------------------------------------------------------------

def test_bonferroni():
    assert bonferroni([0.01, 0.2, np.nan]) == (2, 0.01, 0.02)
    assert bonferroni([0.6, 0.9])[2] == 1.0
    with pytest.raises(InfeasibleError):
        bonferroni([np.nan])


def test_single_stratum_single_neuron():
    rng = np.random.default_rng(0)
    s = StratifiedSamples(((0,),), (rng.poisson(1, (30, 1)),), (rng.poisson(1, (25, 1)),), "location")
    r = run_alt_test(s, "t2")
    assert r.n_tests == 1 and r.corrected_p == r.min_p == r.raw_p[0, 0]


def test_skipped_stratum():
    ds = make_dataset()
    s = stratify(ds, "location-direction")
    task = list(s.task)
    task[0] = task[0][:0]
    s2 = StratifiedSamples(s.strata, tuple(task), s.fr, s.definition)
    with pytest.warns(StratumSkippedWarning):
        r = run_alt_test(s2, "hotelling")
    assert r.skipped == (s.strata[0],) and r.n_tests == len(s.strata) - 1


def test_stratify_layout():
    ds = make_dataset()
    assert len(stratify(ds, "location").strata) == 3
    s = stratify(ds)
    assert len(s.strata) == 6
    assert sum(x.shape[0] for x in s.task) == np.sum(ds.context == "task")
    with pytest.raises(ValueError):
        stratify(ds, "speed")


@pytest.mark.parametrize("test", ["t2", "ks", "chi2", "hotelling", "dcorr", "mmd"])
def test_all_tests_run(test):
    ds = generate(SimSpec(n_random=2, n_both=2, n_subdatasets=2, seed=1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = run_alt_test(ds, test)
    assert 0 <= r.corrected_p <= 1
    assert r.to_dict()["test"] == test


def test_large_signal_rejects():
    ds = generate(SimSpec(n_random=0, n_both=0, n_context=10, scale=2.0, n_subdatasets=3, seed=0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert run_alt_test(ds, "hotelling").reject()
        assert run_alt_test(ds, "t2").reject()
