import math

import numpy as np
import pytest
from scipy.stats import norm

from crossdecode.decoders import CVConfig, PoissonNB
from crossdecode.divergence import (
    AccuracyEstimate,
    TestConfig,
    accuracy,
    accuracy_from_errors,
    combined_z_test,
    repetition_seed,
    run_context_test,
    seed_averaged_test,
    symmetric_divergence,
)
from crossdecode.data import build_windowed
from crossdecode.errors import ConfigError, DegenerateVarianceError, InfeasibleError
from crossdecode.simulator import SimSpec, generate

from conftest import make_dataset

FAST_CV = CVConfig(prior_n=(1.0, 10.0), prior_rate=(0.5, 1.0))


def test_all_correct():
    est = accuracy_from_errors(np.zeros(30, int))
    assert est.value == 1.0 and est.se == 0.0


def test_half_errors_se():
    e = np.r_[np.zeros(50, int), np.ones(50, int)]
    est = accuracy_from_errors(e)
    assert est.value == 0.5
    # population sd of a 50/50 vector over sqrt(n)
    assert est.se == pytest.approx(0.05)
    assert accuracy_from_errors(e, 12).se == pytest.approx(0.05 * math.sqrt(12))


def test_accuracy_on_design():
    ds = make_dataset()
    d = build_windowed(ds, 0, "F", "task")
    rates = np.ones((3, 3))
    m = PoissonNB(rates=rates, prior_rate=0.0, prior_n=0.0, n_neurons=3)
    est = accuracy(m, d)
    # constant model predicts class 0
    assert est.value == pytest.approx(np.mean(d.labels == 0))
    rows = np.array([0, 3, 6])
    assert accuracy(m, d, rows=rows).n_test == 3


def test_symmetric_divergence_examples():
    assert symmetric_divergence((0.7, 0), (0.7, 0), (0.7, 0), (0.7, 0))[0] == 0.0
    delta, sigma = symmetric_divergence((0.75, 0.007), (0.76, 0.007), (0.60, 0.007), (0.64, 0.007))
    assert delta == pytest.approx(0.135)
    assert sigma == pytest.approx(0.014)
    a = accuracy_from_errors(np.r_[np.zeros(3, int), 1])
    assert symmetric_divergence(a, a, a, a) == (0.0, pytest.approx(2 * a.se))


def test_combined_z_examples():
    assert combined_z_test([(0.0, 1.0)]).p_value == 0.5
    t = combined_z_test([(0.1, 0.05), (0.2, 0.05)])
    assert t.z == pytest.approx(3.0)
    assert t.p_value == pytest.approx(1.35e-3, abs=1e-5)
    assert t.p_two_sided == pytest.approx(2 * t.p_value)
    assert combined_z_test([(-0.1, 0.05)]).p_value > 0.5
    with pytest.raises(DegenerateVarianceError):
        combined_z_test([(0.1, 0.0), (0.0, 0.0)])
    with pytest.raises(ValueError):
        combined_z_test([])


def test_scale_invariance():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.normal(size=3)
        s = rng.uniform(0.1, 1, 3)
        c = rng.uniform(0.1, 100)
        p1 = combined_z_test(list(zip(d, s))).p_value
        p2 = combined_z_test(list(zip(c * d, c * s))).p_value
        assert p1 == pytest.approx(p2, rel=1e-9, abs=1e-300)
        # monotone in the summed delta
        assert combined_z_test(list(zip(d + 0.1, s))).p_value <= p1


def test_table_arithmetic():
    with_vif = seed_averaged_test(0.75, 0.60, 0.007, 0.007, vif=12)
    assert 5e-4 <= with_vif.p_value <= 5e-3
    assert seed_averaged_test(0.75, 0.60, 0.007, 0.007, vif=1).p_value < 1e-20


def test_seed_average_matches_strata_form():
    # the per-stratum form reduces to the same/cross form when summed
    same, cross, se = [0.8, 0.7], [0.65, 0.6], 0.01
    strata = [(0.5 * (2 * s - 2 * x), 0.5 * 4 * se) for s, x in zip(same, cross)]
    a = combined_z_test(strata).p_value
    b = seed_averaged_test(np.mean(same), np.mean(cross), se, se).p_value
    assert a == pytest.approx(b)


def test_repetition_seed_stable():
    assert repetition_seed(0, 3) == repetition_seed(0, 3)
    assert repetition_seed(0, 3) != repetition_seed(0, 4)
    assert repetition_seed(1, 3) != repetition_seed(0, 3)


def test_config_validation():
    for kw in ({"decoders": ("knn",)}, {"vif": 0.5}, {"vif_mode": "x"}, {"p_alpha": 1.0},
               {"ablations": ("no_cv",)}, {"lag": -1}):
        with pytest.raises(ConfigError):
            TestConfig(**kw)


@pytest.fixture(scope="module")
def sim_run():
    ds = generate(SimSpec(n_random=3, n_both=5, n_subdatasets=4, scale=1.0, seed=2))
    cfg = TestConfig(lag=2, n_repetitions=3, cv=FAST_CV, ablations=("no_matching", "no_stratification"))
    return ds, cfg, run_context_test(ds, cfg)


def test_report_is_consistent(sim_run):
    _, cfg, res = sim_run
    rep = res.report()
    assert rep.n_repetitions == 3 and len(rep.seeds) == 3 - rep.n_failed
    d = sum(s.delta for s in rep.strata)
    s = sum(s.sigma for s in rep.strata)
    assert rep.p_value == pytest.approx(norm.sf(d / s))
    # fixed VIF: stratum form identical to the averaged same/cross form
    assert rep.p_value == pytest.approx(rep.p_fixed_vif, rel=1e-9)
    same = [a for a in res.accuracies if a.train_context == a.test_context]
    cross = [a for a in res.accuracies if a.train_context != a.test_context]
    assert rep.acc_same_bar == pytest.approx(np.mean([a.accuracy for a in same]))
    assert rep.acc_cross_bar == pytest.approx(np.mean([a.accuracy for a in cross]))
    assert rep.p_no_vif <= rep.p_fixed_vif
    assert rep.p_no_matching is not None and rep.p_no_stratification is not None
    assert {st for st in {a.stratum for a in res.accuracies}} == {"F", "B"}
    assert len(res.accuracies) == len(rep.seeds) * 2 * 2 * 2


def test_run_matching_equalizes_test_sizes(sim_run):
    _, _, res = sim_run
    by_rep = {}
    for a in res.accuracies:
        by_rep.setdefault(a.repetition, set()).add(a.n_test)
    # one matched m per repetition across all contexts and strata
    assert all(len(v) == 1 for v in by_rep.values())
    assert all(next(iter(v)) % 3 == 0 for v in by_rep.values())


def test_run_deterministic(sim_run):
    ds, cfg, res = sim_run
    again = run_context_test(ds, cfg)
    assert again.report().to_dict() == res.report().to_dict()


def test_tuning_shape(sim_run):
    ds, _, res = sim_run
    for (c, st), curve in res.tuning.items():
        assert curve.shape == (ds.n_neurons, 3)


def test_missing_stratum_or_context():
    ds = make_dataset(directions=("F",))
    with pytest.raises(InfeasibleError):
        run_context_test(ds, TestConfig(lag=0, n_repetitions=1, cv=FAST_CV))


def test_infeasible_repetitions_raise():
    # one subdataset per context cannot be partitioned
    ds = make_dataset(n_sub=1)
    with pytest.raises(InfeasibleError):
        run_context_test(ds, TestConfig(lag=0, n_repetitions=2, cv=FAST_CV))


def test_estimated_mode_uses_khat(sim_run):
    ds, cfg, res = sim_run
    from dataclasses import replace
    est = run_context_test(ds, replace(cfg, vif_mode="estimated", ablations=())).report()
    assert est.p_value == pytest.approx(norm.sf(sum(s.delta for s in est.strata) / sum(s.sigma for s in est.strata)))
    assert est.p_est_vif == pytest.approx(res.report().p_est_vif)
    assert est.est_vif >= 1


def test_accuracy_estimate_type():
    e = accuracy_from_errors([0, 1, 0, 0])
    assert isinstance(e, AccuracyEstimate)
    assert e.value == 0.75 and e.n_test == 4
    with pytest.raises(ValueError):
        accuracy_from_errors([])
