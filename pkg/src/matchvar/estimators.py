"""Point estimators of the ATT."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .data import Dataset, split_by_treatment
from .errors import EstimationError, FittingError, InfeasibleError, ParameterError
from .matching import MatchResult


@dataclass(frozen=True, eq=False)
class ControlModel:
    """Linear model of the control outcome surface, cross-fitted on two folds.

    ``fold_assignment[i]`` is the fold of control row ``control_rows[i]``.
    """

    coefficients: np.ndarray
    control_rows: np.ndarray
    fold_assignment: np.ndarray
    per_fold_coefficients: tuple

    def predict(self, d: Dataset) -> np.ndarray:
        """mu_hat(0, X_i) for every unit.

        A control is predicted by the model fit on the other fold, a treated
        unit by the average of both fold models.
        """
        Xd = np.column_stack([np.ones(d.n), d.covariates])
        b0, b1 = self.per_fold_coefficients
        pred = Xd @ (0.5 * (b0 + b1))
        rows = self.control_rows
        pred[rows] = np.where(self.fold_assignment == 0, Xd[rows] @ b1, Xd[rows] @ b0)
        return pred


def _ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    Xd = np.column_stack([np.ones(len(y)), X])
    if np.linalg.matrix_rank(Xd) < Xd.shape[1]:
        raise FittingError("rank-deficient design in control outcome regression")
    return np.linalg.lstsq(Xd, y, rcond=None)[0]


def fit_control_model(d: Dataset, seed: int) -> ControlModel:
    """OLS of Y on (1, X) over controls, fit separately on two random halves."""
    _, controls = split_by_treatment(d)
    controls = np.asarray(controls)
    if len(controls) < 2 * (d.k + 1):
        raise FittingError(f"need at least {2 * (d.k + 1)} controls for two-fold fitting, got {len(controls)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(controls))
    folds = np.empty(len(controls), dtype=np.int8)
    folds[perm[: len(controls) // 2]] = 0
    folds[perm[len(controls) // 2 :]] = 1
    X, y = d.covariates[controls], d.outcomes[controls]
    b0 = _ols(X[folds == 0], y[folds == 0])
    b1 = _ols(X[folds == 1], y[folds == 1])
    full = _ols(X, y)
    return ControlModel(full, controls, folds, (b0, b1))


@dataclass(frozen=True, eq=False)
class AttEstimate:
    """Raw and debiased matching estimates with per-treated contributions.

    ``contributions`` holds tau_tilde_t; ``raw_contributions`` holds
    Y_t - sum_j w_jt Y_j. Without a control model the two coincide.
    """

    tau_hat: float
    tau_tilde: float
    contributions: np.ndarray
    raw_contributions: np.ndarray
    treated: np.ndarray
    debiased: bool = False

    @property
    def n_T_used(self) -> int:
        return len(self.treated)

    @property
    def residuals(self) -> np.ndarray:
        return self.contributions - self.tau_tilde


def _contributions(y: np.ndarray, m: MatchResult) -> tuple[np.ndarray, np.ndarray]:
    matched = m.matched
    if not matched:
        raise EstimationError("no treated unit has a matched control")
    treated = np.array([c.treated for c in matched])
    contrib = np.array([y[c.treated] - c.weights @ y[c.controls] for c in matched])
    return treated, contrib


def att_estimate(d: Dataset, m: MatchResult) -> float:
    """Matching estimator: mean over matched treated of Y_t - sum_j w_jt Y_j."""
    _, contrib = _contributions(d.outcomes, m)
    return float(contrib.mean())


def debiased_att(d: Dataset, m: MatchResult, cm: Optional[ControlModel] = None) -> AttEstimate:
    """Debiased estimate using residuals Y_i - mu_hat(0, X_i).

    Passing ``cm=None`` skips debiasing (tau_tilde equals tau_hat).
    """
    treated, raw = _contributions(d.outcomes, m)
    if cm is None:
        contrib = raw
    else:
        resid = d.outcomes - cm.predict(d)
        _, contrib = _contributions(resid, m)
    return AttEstimate(float(raw.mean()), float(contrib.mean()), contrib, raw, treated, cm is not None)


# --------------------------------------------------------------------------
# stable balancing weights


@dataclass(frozen=True, eq=False)
class SbwSolution:
    weights: np.ndarray  # aligned with ``controls``, on the simplex
    imbalance: np.ndarray  # |mean_T(X_d) - sum_j w_j X_dj| in constraint units
    objective: float
    delta: float
    controls: np.ndarray
    kkt_residual: float
    scale: np.ndarray = field(repr=False, default=None)

    def estimate(self, d: Dataset) -> float:
        """mean_T(Y) - sum_j w_j Y_j."""
        return float(d.outcomes[d.treatment == 1].mean() - self.weights @ d.outcomes[self.controls])


def min_max_imbalance(A: np.ndarray, b: np.ndarray) -> float:
    """Smallest achievable max_d |b_d - A_d w| over the simplex (an LP)."""
    k, n = A.shape
    # variables (w, s); minimise s
    c = np.r_[np.zeros(n), 1.0]
    A_ub = np.block([[A, -np.ones((k, 1))], [-A, -np.ones((k, 1))]])
    b_ub = np.r_[b, -b]
    A_eq = np.r_[np.ones(n), 0.0][None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * n + [(0, None)], method="highs")
    return float(res.x[-1]) if res.status == 0 else float("nan")


def _sbw_kkt(A, b, delta, w, lam_eq, lam_bal):
    """KKT residual for min 0.5||w||^2, w >= 0, sum w = 1, |A w - b| <= delta.

    ``lam_bal[d]`` is the multiplier of balance row d, sign convention
    w = max(0, lam_eq + A^T lam_bal): negative on an active upper bound,
    positive on an active lower bound.
    """
    g = A @ w - b
    prim = max(abs(w.sum() - 1.0), float(np.max(-w, initial=0.0)), float(np.max(np.abs(g) - delta, initial=0.0)))
    stat = float(np.max(np.abs(w - np.maximum(0.0, lam_eq + A.T @ lam_bal))))
    # complementary slackness / sign of balance multipliers
    comp = 0.0
    for dd in range(len(b)):
        lb = lam_bal[dd]
        if lb < 0:
            comp = max(comp, -lb * abs(g[dd] - delta))
        elif lb > 0:
            comp = max(comp, lb * abs(g[dd] + delta))
    return max(prim, stat, comp)


def _newton_dual(H, c, y0, max_iter=200):
    """Maximise -0.5 ||(H^T y)_+||^2 + c^T y by semismooth Newton.

    Returns None when the iteration stalls or diverges, which is what an
    infeasible restricted primal (unbounded dual) looks like.
    """
    y = y0.copy()

    def value(yy):
        v = np.maximum(H.T @ yy, 0.0)
        return -0.5 * v @ v + c @ yy

    f = value(y)
    scale = 1.0 + np.abs(c).max()
    eye = np.eye(len(c))
    for _ in range(max_iter):
        v = H.T @ y
        S = v > 0
        grad = c - H[:, S] @ v[S]
        if np.max(np.abs(grad)) <= 1e-13 * scale:
            return y
        K = H[:, S] @ H[:, S].T
        step = np.linalg.lstsq(K + 1e-13 * max(np.trace(K), 1.0) * eye, grad, rcond=None)[0]
        slope = grad @ step
        t = 1.0
        while True:
            yn = y + t * step
            fn = value(yn)
            if fn >= f + 1e-4 * t * slope - 1e-14 * (1.0 + abs(f)) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 or not np.all(np.isfinite(yn)) or np.abs(yn).max() > 1e12:
            return None
        y, f = yn, fn
    return None


def _solve_pattern(A, b, delta, side, y0):
    """Dual solve with balance rows fixed at their bounds according to ``side``.

    ``side[d]`` is +1 (upper bound binding), -1 (lower bound binding) or 0
    (row dropped). Returns (w, nu, lam_bal, y) or None.
    """
    k, n = A.shape
    act = np.flatnonzero(side)
    H = np.vstack([np.ones(n), A[act]])
    c = np.r_[1.0, b[act] + side[act] * delta]
    y = _newton_dual(H, c, y0)
    if y is None:
        return None
    lam_bal = np.zeros(k)
    lam_bal[act] = y[1:]
    w = np.maximum(0.0, y[0] + A.T @ lam_bal)
    return w, float(y[0]), lam_bal, y


def _exact_sbw(A, b, delta):
    """Exact minimum-norm simplex weights under two-sided balance bounds.

    Works on the (k+1)-dimensional dual, where w = (nu + A^T lam)_+. For a
    fixed pattern of binding balance rows the dual is smooth and solved by
    Newton; the pattern itself is updated by a dual active-set loop, with
    exhaustive search over patterns as a fallback for small k.
    """
    k, n = A.shape
    tol = 1e-10 * (1.0 + np.abs(A).max())

    def y_start(side):
        return np.r_[1.0 / n, np.zeros(np.count_nonzero(side))]

    if delta == 0:
        out = _solve_pattern(A, b, 0.0, np.ones(k), y_start(np.ones(k)))
        if out is None:
            return None
        w, nu, lam, _ = out
        return w, nu, lam

    def admissible(side, out):
        w, _, lam, _ = out
        g = A @ w - b
        wrong = (side * lam) > tol  # upper bound needs lam <= 0, lower lam >= 0
        slack = (side == 0) & (np.abs(g) > delta + tol)
        return wrong, slack, g

    side = np.zeros(k)
    seen = set()
    y = y_start(side)
    while tuple(side) not in seen:
        seen.add(tuple(side))
        out = _solve_pattern(A, b, delta, side, y)
        if out is None:
            break
        wrong, slack, g = admissible(side, out)
        if not wrong.any() and not slack.any():
            return out[:3]
        new = side.copy()
        new[wrong] = 0.0
        new[slack] = np.sign(g[slack])
        # warm start: keep multipliers of rows that stay binding
        lam = out[2]
        y = np.r_[out[1], lam[np.flatnonzero(new)] * (side[np.flatnonzero(new)] == new[np.flatnonzero(new)])]
        side = new

    if k > 8:
        return None
    for pat in itertools.product((0.0, 1.0, -1.0), repeat=k):
        side = np.array(pat)
        out = _solve_pattern(A, b, delta, side, y_start(side))
        if out is None:
            continue
        wrong, slack, _ = admissible(side, out)
        if not wrong.any() and not slack.any():
            return out[:3]
    return None


def sbw_weights(d: Dataset, delta: float, standardize: bool = False) -> SbwSolution:
    """Minimum-norm control weights on the simplex within balance tolerance ``delta``.

    Solves min sum w_j^2 s.t. w >= 0, sum w = 1 and
    |mean_T(X_d) - sum_j w_j X_dj| <= delta for every covariate d. With
    ``standardize=True`` covariates are first divided by their full-sample
    standard deviations, so ``delta`` is in SD units.
    """
    d.require_both_groups()
    if delta < 0 or np.isnan(delta):
        raise ParameterError(f"delta must be >= 0, got {delta}")
    treated, controls = map(np.asarray, split_by_treatment(d))
    scale = np.ones(d.k)
    if standardize:
        scale = d.covariates.std(axis=0, ddof=1)
        scale[scale == 0] = 1.0
    X = d.covariates / scale
    A = X[controls].T
    b = X[treated].mean(axis=0)
    n = len(controls)

    if np.isinf(delta):
        w = np.full(n, 1.0 / n)
        return SbwSolution(w, np.abs(b - A @ w), float(w @ w), delta, controls, 0.0, scale)

    best = min_max_imbalance(A, b)
    if not best <= delta + 1e-9:
        raise InfeasibleError(f"balance infeasible at delta={delta}; smallest achievable max imbalance is {best:.6g}", best)

    sol = _exact_sbw(A, b, delta)
    if sol is None:
        raise EstimationError(f"balancing-weights solver did not converge at delta={delta}")
    w, nu, lam = sol
    res = _sbw_kkt(A, b, delta, w, nu, lam)
    if res > 1e-8:
        raise EstimationError(f"balancing weights KKT residual {res:.3g} exceeds 1e-8")
    return SbwSolution(w, np.abs(b - A @ w), float(w @ w), delta, controls, res, scale)
