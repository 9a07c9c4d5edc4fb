import numpy as np
import pytest

import oracles
from matchvar.data import Dataset
from matchvar.errors import EstimationError, ParameterError
from matchvar.estimators import AttEstimate, debiased_att
from matchvar.matching import Cluster, MatchResult, Strategy, match_mnn
from matchvar.variance import (
    MAMMEN_HIGH,
    MAMMEN_LOW,
    CIMethod,
    ai06_sigma2,
    ai06_variance,
    bootstrap_draws,
    cluster_variance,
    multipliers,
    pooled_variance,
    reuse_correction,
    v_total_hat,
    ve_hat,
    wald_ci,
    wild_bootstrap_ci,
)


def custom_match(d, clusters):
    return MatchResult(
        tuple(Cluster(t, np.asarray(c), np.asarray(w, dtype=float)) for t, c, w in clusters),
        Strategy.MNN,
        np.flatnonzero(d.treatment == 0),
        d.covariates,
    )


def estimate_from(contrib):
    contrib = np.asarray(contrib, dtype=float)
    return AttEstimate(float(contrib.mean()), float(contrib.mean()), contrib, contrib, np.arange(len(contrib)))


@pytest.mark.parametrize("y, expected", [((5, 5), 0.0), ((1, 2, 3), 1.0), ((0, 2), 2.0)])
def test_cluster_variance(y, expected):
    assert cluster_variance(y) == pytest.approx(expected, abs=1e-15)


def test_cluster_variance_needs_two():
    with pytest.raises(ParameterError):
        cluster_variance([1.0])


def test_pooled_variance_hand_example():
    # cluster A: (0, 2) -> s2 = 2; cluster B: (1, 2, 3) -> s2 = 1
    y = [0.0, 0.0, 0.0, 2.0, 1.0, 2.0, 3.0]
    d = Dataset(np.zeros((7, 1)), y, [1, 1, 0, 0, 0, 0, 0])
    m = custom_match(d, [(0, [2, 3], [0.5, 0.5]), (1, [4, 5, 6], [1 / 3] * 3)])
    assert pooled_variance(m, d) == pytest.approx(1.4, abs=1e-14)


def test_pooled_variance_skips_singletons():
    y = [0.0, 0.0, 9.0, 0.0, 4.0 * np.sqrt(0.5)]
    d = Dataset(np.zeros((5, 1)), y, [1, 1, 0, 0, 0])
    m = custom_match(d, [(0, [2], [1.0]), (1, [3, 4], [0.5, 0.5])])
    # (0, 2 sqrt 2) has sample variance 4
    assert pooled_variance(m, d) == pytest.approx(4.0, abs=1e-12)


def test_pooled_variance_constant_outcomes():
    rng = np.random.default_rng(0)
    d = Dataset(rng.normal(size=(20, 2)), np.full(20, 3.0), np.r_[np.ones(5), np.zeros(15)])
    assert pooled_variance(match_mnn(d, 3), d) == 0.0


def test_pooled_variance_all_singleton():
    d = Dataset(np.zeros((2, 1)), [1.0, 0.0], [1, 0])
    with pytest.raises(EstimationError, match="all clusters singleton"):
        pooled_variance(custom_match(d, [(0, [1], [1.0])]), d)


@pytest.mark.parametrize("s2, n_T, ess, expected", [(1, 4, 4, 0.5), (0, 7, 3, 0.0), (2, 1, 1, 4.0)])
def test_ve_hat(s2, n_T, ess, expected):
    assert ve_hat(s2, n_T, ess) == pytest.approx(expected, abs=1e-15)


def test_v_total_reuse_free_is_deviations():
    y = [3.0, 5.0, 1.0, 2.0]
    d = Dataset(np.zeros((4, 1)), y, [1, 1, 0, 0])
    m = custom_match(d, [(0, [2], [1.0]), (1, [3], [1.0])])
    est = debiased_att(d, m)
    assert reuse_correction(m) == 0.0
    rep = v_total_hat(d, m, est, s2=1.0)
    assert rep.v_total_hat == pytest.approx(np.mean((est.contributions - est.tau_tilde) ** 2))


def test_v_total_shared_control_bracket():
    y = [4.0, 6.0, 1.0]
    d = Dataset(np.zeros((3, 1)), y, [1, 1, 0])
    m = custom_match(d, [(0, [2], [1.0]), (1, [2], [1.0])])
    est = debiased_att(d, m)
    assert reuse_correction(m) == 2.0  # 2^2 - 2
    rep = v_total_hat(d, m, est, s2=0.7)
    dev = np.mean((est.contributions - est.tau_tilde) ** 2)
    # S^2 (1/n_T) (2^2 - 2) = S^2 with n_T = 2
    assert rep.v_total_hat - dev == pytest.approx(0.7, abs=1e-14)


def test_v_total_matches_oracle():
    rng = np.random.default_rng(3)
    d = Dataset(rng.normal(size=(40, 2)), rng.normal(size=40), np.r_[np.ones(12), np.zeros(28)])
    m = match_mnn(d, 4)
    est = debiased_att(d, m)
    rep = v_total_hat(d, m, est)
    clusters = [c.controls.tolist() for c in m.clusters]
    weights = [c.weights.tolist() for c in m.clusters]
    y = d.outcomes.tolist()
    s2 = oracles.pooled_s2(clusters, y)
    tot = oracles.total_weights(clusters, weights)
    assert rep.s2_pooled == pytest.approx(s2, abs=1e-12)
    assert rep.ess == pytest.approx(oracles.ess(list(tot.values())), abs=1e-10)
    assert rep.ve_hat == pytest.approx(oracles.ve(s2, 12, oracles.ess(list(tot.values()))), abs=1e-12)
    assert rep.v_total_hat == pytest.approx(oracles.v_total(est.contributions.tolist(), clusters, weights, s2), abs=1e-12)
    assert rep.v_per_estimate == pytest.approx(rep.v_total_hat / 12)


def test_v_total_disagreeing_estimate():
    y = [4.0, 6.0, 1.0, 2.0]
    d = Dataset(np.zeros((4, 1)), y, [1, 1, 0, 0])
    m = custom_match(d, [(0, [2, 3], [0.5, 0.5]), (1, [2, 3], [0.5, 0.5])])
    with pytest.raises(ParameterError):
        v_total_hat(d, m, estimate_from([1.0, 2.0, 3.0]))


# --------------------------------------------------------------------------
# comparator


def test_ai06_sigma_line_example():
    x = np.array([9.0, 10.0, 0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 0.0, 0.0, 1.0, 2.0, 3.0])
    d = Dataset(x[:, None], y, [1, 1, 0, 0, 0, 0])
    sig = ai06_sigma2(d, 1)
    assert sig[2] == pytest.approx(0.5)
    expected = oracles.ai06_sigma2(x[:, None].tolist(), y.tolist(), d.treatment.tolist(), list(d.unit_ids), 1)
    np.testing.assert_allclose(sig, expected, atol=1e-14)


def test_ai06_constant_outcomes():
    rng = np.random.default_rng(4)
    d = Dataset(rng.normal(size=(30, 2)), np.full(30, 2.0), np.r_[np.ones(10), np.zeros(20)])
    assert ai06_variance(d, match_mnn(d, 1), 1) == 0.0


def test_ai06_group_too_small():
    d = Dataset(np.arange(4.0)[:, None], np.arange(4.0), [1, 0, 0, 0])
    with pytest.raises(ParameterError):
        ai06_sigma2(d, 1)


def test_ai06_close_to_ve_under_homoskedastic_noise():
    # nearly reuse-free regime: many more controls than treated
    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n_T, n_C = 200, 2000
        X = rng.uniform(size=(n_T + n_C, 1))
        d = Dataset(X, rng.normal(size=n_T + n_C), np.r_[np.ones(n_T), np.zeros(n_C)])
        m = match_mnn(d, 1)
        tot = oracles.total_weights([c.controls.tolist() for c in m.clusters], [c.weights.tolist() for c in m.clusters])
        ess = oracles.ess(list(tot.values()))
        # oracle V_E with the true unit noise variance
        ratios.append(ai06_variance(d, m, 1) / oracles.ve(1.0, n_T, ess))
    assert np.mean(ratios) == pytest.approx(1.0, rel=0.15)

# --------------------------------------------------------------------------
# intervals


def test_wald_example():
    ci = wald_ci(2.0, 0.25, 0.95)
    assert (ci.lower, ci.upper) == pytest.approx((1.0200, 2.9800), abs=1e-3)
    assert ci.method is CIMethod.WALD_POOLED
    assert ci.covers(2.5) and not ci.covers(3.0)


def test_wald_degenerate_and_half_level():
    ci = wald_ci(1.5, 0.0)
    assert (ci.lower, ci.upper) == (1.5, 1.5)
    ci = wald_ci(0.0, 4.0, 0.5)
    assert ci.upper == pytest.approx(0.6745 * 2, abs=1e-4)
    with pytest.raises(ParameterError):
        wald_ci(0.0, -1.0)
    with pytest.raises(ParameterError):
        wald_ci(0.0, 1.0, 1.0)


def test_bootstrap_zero_residuals():
    ci = wild_bootstrap_ci(estimate_from([2.0, 2.0, 2.0]), B=200, seed=1)
    assert (ci.lower, ci.upper) == (2.0, 2.0)


def test_bootstrap_three_units_exact():
    est = estimate_from([4.0, 5.0, 6.0])
    exact = oracles.bootstrap_distribution([-1.0, 0.0, 1.0])
    assert exact == pytest.approx([-2 / 3] * 2 + [0] * 4 + [2 / 3] * 2)
    ci = wild_bootstrap_ci(est, B=999, seed=7)
    lo = 5.0 + oracles.lower_quantile(exact, 0.025)
    hi = 5.0 + oracles.lower_quantile(exact, 0.975)
    assert (ci.lower, ci.upper) == pytest.approx((lo, hi), abs=1e-14)
    assert (ci.lower, ci.upper) == pytest.approx((5 - 2 / 3, 5 + 2 / 3), abs=1e-14)


def test_bootstrap_symmetry():
    rng = np.random.default_rng(8)
    est = estimate_from(rng.normal(size=50))
    gaps = []
    for B in (200, 20000):
        ci = wild_bootstrap_ci(est, B=B, seed=3)
        gaps.append(abs(ci.lower + ci.upper - 2 * est.tau_tilde))
    assert gaps[1] < 0.02


def test_bootstrap_is_seeded():
    est = estimate_from(np.arange(10.0))
    np.testing.assert_array_equal(bootstrap_draws(est, 300, 5), bootstrap_draws(est, 300, 5))
    assert not np.array_equal(bootstrap_draws(est, 300, 5), bootstrap_draws(est, 300, 6))


def test_bootstrap_preconditions():
    with pytest.raises(ParameterError):
        wild_bootstrap_ci(estimate_from([1.0]), B=200)
    with pytest.raises(ParameterError):
        wild_bootstrap_ci(estimate_from([1.0, 2.0]), B=50)


def test_multiplier_laws():
    rng = np.random.default_rng(0)
    r = multipliers(rng, 100000)
    assert set(np.unique(r)) == {-1.0, 1.0}
    assert abs(r.mean()) < 0.01
    m = multipliers(rng, 200000, "mammen")
    assert set(np.unique(m)) == {MAMMEN_LOW, MAMMEN_HIGH}
    assert abs(m.mean()) < 0.01 and abs(m.var() - 1) < 0.02
    with pytest.raises(ParameterError):
        multipliers(rng, 3, "normal")
