import numpy as np
import pytest

from matchvar.data import Dataset
from matchvar.errors import EstimationError, FittingError, InfeasibleError, ParameterError
from matchvar.estimators import (
    ControlModel,
    att_estimate,
    debiased_att,
    fit_control_model,
    min_max_imbalance,
    sbw_weights,
)
from matchvar.matching import Cluster, MatchResult, Strategy, match_mnn, match_radius


def custom_match(d, clusters):
    controls = np.flatnonzero(d.treatment == 0)
    return MatchResult(
        tuple(Cluster(t, np.asarray(c), np.asarray(w, dtype=float)) for t, c, w in clusters),
        Strategy.MNN,
        controls,
        d.covariates,
    )


def test_att_examples():
    d = Dataset([[0.0], [0.0]], [3.0, 1.0], [1, 0])
    assert att_estimate(d, custom_match(d, [(0, [1], [1.0])])) == 2.0

    d = Dataset(np.zeros((4, 1)), [2.0, 4.0, 1.0, 1.0], [1, 1, 0, 0])
    assert att_estimate(d, custom_match(d, [(0, [2], [1.0]), (1, [3], [1.0])])) == 2.0

    d = Dataset(np.zeros((3, 1)), [3.0, 0.0, 2.0], [1, 0, 0])
    assert att_estimate(d, custom_match(d, [(0, [1, 2], [0.5, 0.5])])) == 2.0


def test_att_no_matches():
    d = Dataset([[0.0], [100.0]], [1.0, 1.0], [1, 0])
    with pytest.warns(UserWarning):
        m = match_radius(d, 0.1)
    with pytest.raises(EstimationError):
        att_estimate(d, m)


def test_att_skips_unmatched_treated():
    d = Dataset([[0.0], [50.0], [0.1]], [3.0, 9.0, 1.0], [1, 1, 0])
    with pytest.warns(UserWarning):
        m = match_radius(d, 1.0)
    assert att_estimate(d, m) == 2.0


def test_fit_noiseless_linear():
    x = np.linspace(0, 1, 12)
    d = Dataset(x[:, None], 1 + 2 * x, np.r_[1, 1, np.zeros(10)])
    cm = fit_control_model(d, seed=3)
    for b in cm.per_fold_coefficients:
        np.testing.assert_allclose(b, [1, 2], atol=1e-8)
    np.testing.assert_allclose(cm.coefficients, [1, 2], atol=1e-8)


def test_fit_constant_outcome():
    rng = np.random.default_rng(0)
    d = Dataset(rng.normal(size=(20, 2)), np.full(20, 5.0), np.r_[np.ones(4), np.zeros(16)])
    np.testing.assert_allclose(fit_control_model(d, 1).coefficients, [5, 0, 0], atol=1e-10)


def test_fit_rank_deficient():
    rng = np.random.default_rng(1)
    x = rng.normal(size=20)
    d = Dataset(np.column_stack([x, x]), rng.normal(size=20), np.r_[np.ones(4), np.zeros(16)])
    with pytest.raises(FittingError):
        fit_control_model(d, 0)


def test_fit_needs_enough_controls():
    d = Dataset(np.arange(5.0)[:, None], np.zeros(5), [1, 0, 0, 0, 1])
    with pytest.raises(FittingError):
        fit_control_model(d, 0)


def test_cross_fitting_predictions():
    rng = np.random.default_rng(2)
    d = Dataset(rng.normal(size=(30, 1)), rng.normal(size=30), np.r_[np.ones(6), np.zeros(24)])
    cm = fit_control_model(d, 5)
    assert sorted(np.bincount(cm.fold_assignment).tolist()) == [12, 12]
    pred = cm.predict(d)
    b0, b1 = cm.per_fold_coefficients
    for row, fold in zip(cm.control_rows, cm.fold_assignment):
        other = b1 if fold == 0 else b0
        assert pred[row] == pytest.approx(other[0] + other[1] * d.covariates[row, 0])
    for t in range(6):
        avg = 0.5 * (b0 + b1)
        assert pred[t] == pytest.approx(avg[0] + avg[1] * d.covariates[t, 0])
    # same seed, same folds
    np.testing.assert_array_equal(fit_control_model(d, 5).fold_assignment, cm.fold_assignment)


def test_debias_without_model_is_raw():
    rng = np.random.default_rng(3)
    d = Dataset(rng.normal(size=(30, 2)), rng.normal(size=30), np.r_[np.ones(8), np.zeros(22)])
    est = debiased_att(d, match_mnn(d, 3))
    assert est.tau_tilde == est.tau_hat
    assert not est.debiased


def test_debias_zero_model_is_raw():
    rng = np.random.default_rng(3)
    d = Dataset(rng.normal(size=(30, 2)), rng.normal(size=30), np.r_[np.ones(8), np.zeros(22)])
    zero = np.zeros(3)
    rows = np.flatnonzero(d.treatment == 0)
    cm = ControlModel(zero, rows, np.zeros(len(rows), dtype=np.int8), (zero, zero))
    est = debiased_att(d, match_mnn(d, 3), cm)
    assert est.tau_tilde == pytest.approx(est.tau_hat, abs=1e-15)


def test_debias_recovers_satt_with_linear_surface():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(60, 2))
    z = np.r_[np.ones(15), np.zeros(45)].astype(int)
    f0 = 1.0 + X @ [2.0, -1.0]
    tau = 0.5 + X[:, 0] ** 2
    d = Dataset(X, f0 + z * tau, z)
    est = debiased_att(d, match_mnn(d, 4), fit_control_model(d, 9))
    np.testing.assert_allclose(est.contributions, tau[:15], atol=1e-10)
    assert est.tau_tilde == pytest.approx(tau[:15].mean(), abs=1e-10)
    assert est.tau_tilde == pytest.approx(est.contributions.mean(), abs=1e-12)


def test_outcome_shift_and_scale():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 2))
    y = rng.normal(size=40)
    z = np.r_[np.ones(10), np.zeros(30)]
    d = Dataset(X, y, z)
    m = match_mnn(d, 3)
    base = att_estimate(d, m)
    assert att_estimate(Dataset(X, y + 7.0, z), m) == pytest.approx(base, abs=1e-12)
    assert att_estimate(Dataset(X, 3.0 * y, z), m) == pytest.approx(3.0 * base, abs=1e-12)
    e1 = debiased_att(d, m, fit_control_model(d, 1))
    e3 = debiased_att(Dataset(X, 3.0 * y, z), m, fit_control_model(Dataset(X, 3.0 * y, z), 1))
    assert e3.tau_tilde == pytest.approx(3.0 * e1.tau_tilde, abs=1e-12)


# --------------------------------------------------------------------------
# stable balancing weights


def test_sbw_single_control():
    d = Dataset([[0.0], [0.5]], [1.0, 0.0], [1, 0])
    sol = sbw_weights(d, 0.5)
    np.testing.assert_allclose(sol.weights, [1.0])
    with pytest.raises(InfeasibleError) as info:
        sbw_weights(d, 0.4)
    assert info.value.min_imbalance == pytest.approx(0.5)


def test_sbw_symmetric_pair():
    d = Dataset([[0.0], [-1.0], [1.0]], [0.0, 1.0, 2.0], [1, 0, 0])
    sol = sbw_weights(d, 0.0)
    np.testing.assert_allclose(sol.weights, [0.5, 0.5], atol=1e-12)
    grid = np.linspace(0, 1, 10001)
    feasible = grid[np.abs(grid * -1 + (1 - grid) * 1) <= 1e-9]
    assert feasible == pytest.approx([0.5])
    assert sol.estimate(d) == pytest.approx(-1.5)


def test_sbw_no_balance_is_uniform():
    rng = np.random.default_rng(6)
    d = Dataset(rng.normal(size=(12, 2)), rng.normal(size=12), np.r_[np.ones(3), np.zeros(9)])
    np.testing.assert_allclose(sbw_weights(d, np.inf).weights, np.full(9, 1 / 9))


def test_sbw_rejects_bad_delta():
    d = Dataset([[0.0], [0.5]], [1.0, 0.0], [1, 0])
    with pytest.raises(ParameterError):
        sbw_weights(d, -1.0)


def random_simplex_candidates(rng, n, count):
    # projected random points: normalised exponentials are uniform on the simplex
    e = rng.exponential(size=(count, n))
    return e / e.sum(axis=1, keepdims=True)


@pytest.mark.parametrize("seed", range(25))
def test_sbw_beats_random_search(seed):
    rng = np.random.default_rng(seed)
    n_c = int(rng.integers(2, 7))
    k = int(rng.integers(1, 3))
    X = rng.normal(size=(2 + n_c, k))
    d = Dataset(X, rng.normal(size=2 + n_c), np.r_[1, 1, np.zeros(n_c)])
    A, b = X[2:].T, X[:2].mean(axis=0)
    delta = max(min_max_imbalance(A, b), 0.0) + float(rng.uniform(0, 0.5))
    sol = sbw_weights(d, delta)
    cand = random_simplex_candidates(rng, n_c, 1000)
    ok = np.all(np.abs(cand @ A.T - b) <= delta, axis=1)
    if ok.any():
        assert sol.objective <= (cand[ok] ** 2).sum(axis=1).min() + 1e-12
    assert sol.kkt_residual <= 1e-8
    assert np.all(sol.imbalance <= delta + 1e-8)
    assert abs(sol.weights.sum() - 1) <= 1e-10 and sol.weights.min() >= 0


def test_sbw_matches_generic_qp_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(12)
    for trial in range(40):
        k, n = int(rng.integers(1, 5)), int(rng.integers(5, 40))
        X = rng.normal(size=(n + 5, k))
        d = Dataset(X, np.zeros(n + 5), np.r_[np.ones(5), np.zeros(n)])
        A, b = X[5:].T, X[:5].mean(axis=0)
        delta = [0.0, 0.05, 0.2][trial % 3]
        if min_max_imbalance(A, b) > delta:
            continue
        w = cp.Variable(n)
        prob = cp.Problem(cp.Minimize(cp.sum_squares(w)), [w >= 0, cp.sum(w) == 1, cp.abs(A @ w - b) <= delta])
        prob.solve(solver=cp.CLARABEL)
        sol = sbw_weights(d, delta)
        assert sol.objective == pytest.approx(prob.value, abs=1e-7)
        assert sol.objective <= prob.value + 1e-9


def test_sbw_standardized_scale():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(40, 2)) * [1.0, 100.0]
    d = Dataset(X, rng.normal(size=40), np.r_[np.ones(10), np.zeros(30)])
    sol = sbw_weights(d, 0.05, standardize=True)
    np.testing.assert_allclose(sol.scale, X.std(axis=0, ddof=1))
    raw_gap = np.abs(X[:10].mean(axis=0) - sol.weights @ X[10:])
    assert np.all(raw_gap / sol.scale <= 0.05 + 1e-8)


def test_min_max_imbalance_simple():
    A = np.array([[0.0, 2.0]])
    assert min_max_imbalance(A, np.array([1.0])) == pytest.approx(0.0)
    assert min_max_imbalance(A, np.array([3.0])) == pytest.approx(1.0)
