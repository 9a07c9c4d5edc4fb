"""Matched control sets and within-cluster weights.

Every matcher works by brute force on the full treated x control distance
matrix; this is O(n_T * n_C) and intended for data sets of a few thousand
units. Matching is always with replacement across treated units, and ties in
distance are broken by the smaller unit id.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from .data import Dataset, split_by_treatment
from .errors import FittingError, ParameterError

# survival grid for the scaled-radius tail diagnostic
TAIL_GRID = np.arange(1, 11) * 0.5


class Strategy(str, enum.Enum):
    MNN = "MNN"
    RADIUS = "Radius"
    CALIPER_SCM = "CaliperSCM"
    PROPENSITY_NN = "PropensityNN"


@dataclass(frozen=True, eq=False)
class Cluster:
    treated: int
    controls: np.ndarray  # dataset row indices, ordered by (distance, id)
    weights: np.ndarray

    def __len__(self):
        return len(self.controls)


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Matched clusters, one per treated unit (empty when unmatched).

    ``basis`` is the feature matrix distances were measured in (covariates,
    standardized covariates, or the fitted propensity score); ``controls``
    lists all control rows of the dataset, which is the index that
    :class:`WeightAggregate` vectors are aligned with.
    """

    clusters: tuple
    strategy: Strategy
    controls: np.ndarray
    basis: np.ndarray = field(repr=False)
    metric: str = "euclidean"
    params: dict = field(default_factory=dict)

    @property
    def matched(self) -> list:
        return [c for c in self.clusters if len(c) > 0]

    @property
    def unmatched(self) -> list:
        return [c.treated for c in self.clusters if len(c) == 0]

    @property
    def n_matched(self) -> int:
        return len(self.matched)

    def weight_matrix(self) -> np.ndarray:
        """Dense (n_matched x n_C) array of w_jt, columns aligned with ``controls``."""
        col = {int(j): i for i, j in enumerate(self.controls)}
        matched = self.matched
        W = np.zeros((len(matched), len(self.controls)))
        for r, c in enumerate(matched):
            W[r, [col[int(j)] for j in c.controls]] = c.weights
        return W


@dataclass(frozen=True, eq=False)
class WeightAggregate:
    total_weight: np.ndarray  # w_j, aligned with MatchResult.controls
    reuse_count: np.ndarray  # K(c)
    total_matches: int  # N_C = sum_t |C_t|
    ess: float


@dataclass(frozen=True, eq=False)
class MatchDiagnostics:
    radii: np.ndarray  # r(C_t) per matched treated unit
    mean_shared_controls: float
    mean_sharing_treated: float
    scaled_radius_tail: np.ndarray  # P(n_C^{1/k} r > u) for u in TAIL_GRID
    n_unmatched: int
    tail_grid: np.ndarray = field(default_factory=lambda: TAIL_GRID.copy())


def feature_basis(d: Dataset, metric: str = "euclidean") -> np.ndarray:
    if metric == "euclidean":
        return d.covariates
    if metric in ("standardized", "standardized-euclidean"):
        sd = d.covariates.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        return d.covariates / sd
    raise ParameterError(f"unknown metric {metric!r}")


def _ordered(dist: np.ndarray, rank: np.ndarray) -> np.ndarray:
    """Column order of each row of ``dist`` by (distance, id rank)."""
    return np.lexsort((np.broadcast_to(rank, dist.shape), dist), axis=-1)


def _nn_clusters(basis, treated, controls, rank, M):
    dist = cdist(basis[treated], basis[controls])
    order = _ordered(dist, rank[controls])[:, :M]
    w = np.full(M, 1.0 / M)
    return tuple(
        Cluster(int(t), controls[order[i]], w.copy()) for i, t in enumerate(treated)
    )


def match_mnn(d: Dataset, M: int, metric: str = "euclidean") -> MatchResult:
    """M-nearest-neighbour matching with uniform weights 1/M."""
    d.require_both_groups()
    if M < 1 or M > d.n_control:
        raise ParameterError(f"M must lie in [1, n_C={d.n_control}], got {M}")
    treated, controls = map(np.asarray, split_by_treatment(d))
    basis = feature_basis(d, metric)
    clusters = _nn_clusters(basis, treated, controls, d.id_rank, M)
    return MatchResult(clusters, Strategy.MNN, controls, basis, metric, {"M": M})


def radius_for(c: float, n_control: int, k: int) -> float:
    """Matching radius c * n_C^(-1/k)."""
    return c * n_control ** (-1.0 / k)


def match_radius(
    d: Dataset, c: float, metric: str = "euclidean", min_controls: int = 0
) -> MatchResult:
    """All controls within c * n_C^(-1/k) of each treated unit, uniformly weighted.

    With ``min_controls > 0`` the caliper adapts per treated unit: when fewer
    than ``min_controls`` controls fall inside the radius, the nearest
    ``min_controls`` are used instead. Treated units left with an empty
    cluster are reported through ``MatchResult.unmatched``.
    """
    d.require_both_groups()
    if not c > 0:
        raise ParameterError(f"radius constant must be positive, got {c}")
    if min_controls < 0 or min_controls > d.n_control:
        raise ParameterError(f"min_controls must lie in [0, n_C], got {min_controls}")
    treated, controls = map(np.asarray, split_by_treatment(d))
    basis = feature_basis(d, metric)
    D = radius_for(c, d.n_control, d.k)
    dist = cdist(basis[treated], basis[controls])
    order = _ordered(dist, d.id_rank[controls])
    clusters = []
    for i, t in enumerate(treated):
        row = order[i]
        m = int(np.count_nonzero(dist[i] <= D))
        m = max(m, min_controls)
        sel = controls[row[:m]]
        clusters.append(Cluster(int(t), sel, np.full(m, 1.0 / m) if m else np.empty(0)))
    n_empty = sum(1 for cl in clusters if len(cl) == 0)
    if n_empty:
        warnings.warn(f"{n_empty} treated unit(s) have no control within radius {D:.4g} and are excluded", stacklevel=2)
    params = {"c": c, "radius": D, "min_controls": min_controls}
    return MatchResult(tuple(clusters), Strategy.RADIUS, controls, basis, metric, params)


# --------------------------------------------------------------------------
# simplex-constrained least squares


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex (sort based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def simplex_kkt_residual(P: np.ndarray, w: np.ndarray) -> float:
    """KKT residual of min ||P^T w||^2 over the simplex at ``w``.

    At an optimum the gradient is constant on the support and no smaller
    anywhere else, so the residual is max_{w_j>0} g_j - min_j g_j.
    """
    g = 2.0 * P @ (P.T @ w)
    return float(max(g[w > 0].max() - g.min(), 0.0))


def min_norm_point(P: np.ndarray, tol: float = 1e-12, max_iter: int = 1000) -> np.ndarray:
    """Wolfe's algorithm: the point of conv(rows of P) closest to the origin.

    Returns barycentric weights over the rows of ``P``. The active set never
    exceeds dim + 1 points, so each iteration solves a tiny linear system.
    """
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    if m == 1:
        return np.ones(1)
    sq = np.einsum("ij,ij->i", P, P)
    scale = max(sq.max(), 1e-300)
    S = [int(np.argmin(sq))]
    lam = np.ones(1)
    for _ in range(max_iter):
        x = lam @ P[S]
        xx = x @ x
        if xx <= tol * tol * scale:
            break
        dots = P @ x
        j = int(np.argmin(dots))
        if xx - dots[j] <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            Q = P[S]
            k = len(S)
            A = np.zeros((k + 1, k + 1))
            A[:k, :k] = Q @ Q.T
            A[:k, k] = 1.0
            A[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            alpha = np.linalg.lstsq(A, rhs, rcond=None)[0][:k]
            if np.all(alpha > 1e-15):
                lam = alpha
                break
            neg = alpha <= 1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, lam / (lam - alpha), np.inf)
            theta = float(np.clip(ratios.min(), 0.0, 1.0))
            lam = lam + theta * (alpha - lam)
            keep = lam > 1e-15
            if keep.all():
                # numerically stuck; drop the smallest coordinate
                keep[int(np.argmin(lam))] = False
            S = [s for s, kp in zip(S, keep) if kp]
            lam = lam[keep]
            lam /= lam.sum()
    w = np.zeros(m)
    w[S] = lam
    return w


def simplex_lsq_pgd(P: np.ndarray, tol: float = 1e-8, max_iter: int = 20000) -> np.ndarray:
    """Accelerated projected gradient for min ||P^T w||^2 over the simplex."""
    m = P.shape[0]
    G = P @ P.T
    L = 2.0 * max(np.linalg.eigvalsh(G)[-1], 1e-300)
    w = np.full(m, 1.0 / m)
    y, t = w.copy(), 1.0
    for _ in range(max_iter):
        w_next = project_simplex(y - 2.0 * G @ y / L)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_next + ((t - 1.0) / t_next) * (w_next - w)
        w, t = w_next, t_next
        if simplex_kkt_residual(P, w) <= tol:
            break
    return w


def _clean_simplex(w: np.ndarray) -> np.ndarray:
    w = np.where(w < 1e-12, 0.0, w)
    return w / w.sum()


def scm_weights(
    d: Dataset, base: MatchResult, solver: str = "wolfe", tol: float = 1e-8, max_iter: int = 1000
) -> MatchResult:
    """Replace uniform cluster weights by synthetic-control weights.

    For each cluster, solves min_w ||X_t - sum_j w_j X_j||^2 over the simplex
    restricted to the cluster members, measured in ``base.basis``. Members
    that receive zero weight stay in the cluster. ``solver`` is ``"wolfe"``
    (exact active set; ``max_iter`` caps major iterations) or ``"pgd"``
    (accelerated projected gradient; ``max_iter`` capped at 20 * value).
    """
    if base.n_matched == 0:
        raise ParameterError("base match has no nonempty cluster")
    basis = base.basis
    out = []
    for c in base.clusters:
        if len(c) <= 1:
            out.append(c)
            continue
        P = basis[c.controls] - basis[c.treated]
        if solver == "wolfe":
            w = min_norm_point(P, max_iter=max_iter)
            if simplex_kkt_residual(P, w) > tol:
                w = simplex_lsq_pgd(P, tol=tol, max_iter=20 * max_iter)
        elif solver == "pgd":
            w = simplex_lsq_pgd(P, tol=tol, max_iter=20 * max_iter)
        else:
            raise ParameterError(f"unknown solver {solver!r}")
        out.append(Cluster(c.treated, c.controls, _clean_simplex(w)))
    return MatchResult(tuple(out), Strategy.CALIPER_SCM, base.controls, basis, base.metric, dict(base.params))


# --------------------------------------------------------------------------
# propensity score


@dataclass(frozen=True)
class LogitFit:
    coefficients: np.ndarray  # intercept first
    n_iter: int
    converged: bool


def fit_logistic_irls(X: np.ndarray, z: np.ndarray, tol: float = 1e-8, max_iter: int = 100, eta_cap: float = 30.0) -> LogitFit:
    """Logistic regression of ``z`` on (1, X) by iteratively reweighted least squares.

    The linear predictor is clipped to [-eta_cap, eta_cap], which keeps the
    iteration finite under (quasi-)separation.
    """
    Xd = np.column_stack([np.ones(len(z)), X])
    beta = np.zeros(Xd.shape[1])
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = np.clip(Xd @ beta, -eta_cap, eta_cap)
        p = expit(eta)
        W = p * (1.0 - p)
        zw = eta + (z - p) / W
        sw = np.sqrt(W)
        beta_new = np.linalg.lstsq(Xd * sw[:, None], zw * sw, rcond=None)[0]
        if not np.all(np.isfinite(beta_new)):
            raise FittingError("IRLS diverged: non-finite coefficients")
        step = np.max(np.abs(beta_new - beta))
        beta = beta_new
        if step <= tol:
            converged = True
            break
    return LogitFit(beta, it, converged)


def propensity_scores(d: Dataset, fit: LogitFit, eta_cap: float = 30.0) -> np.ndarray:
    Xd = np.column_stack([np.ones(d.n), d.covariates])
    return expit(np.clip(Xd @ fit.coefficients, -eta_cap, eta_cap))


def match_propensity(d: Dataset, M: int) -> MatchResult:
    """M-NN matching on the logistic propensity score fitted by IRLS."""
    d.require_both_groups()
    if M < 1 or M > d.n_control:
        raise ParameterError(f"M must lie in [1, n_C={d.n_control}], got {M}")
    fit = fit_logistic_irls(d.covariates, d.treatment.astype(float))
    score = propensity_scores(d, fit)[:, None]
    treated, controls = map(np.asarray, split_by_treatment(d))
    clusters = _nn_clusters(score, treated, controls, d.id_rank, M)
    params = {"M": M, "coefficients": fit.coefficients.tolist(), "converged": fit.converged}
    return MatchResult(clusters, Strategy.PROPENSITY_NN, controls, score, "propensity", params)


# --------------------------------------------------------------------------
# aggregation and diagnostics


def ess(weights: np.ndarray) -> float:
    """Effective sample size (sum w)^2 / sum w^2; NaN when all weights vanish."""
    w = np.asarray(weights, dtype=float)
    ss = float(w @ w)
    if ss == 0.0:
        return float("nan")
    return float(w.sum() ** 2 / ss)


def aggregate_weights(m: MatchResult, n_C: Optional[int] = None) -> WeightAggregate:
    """Total weight w_j, reuse count K(c), N_C and ESS over the control pool."""
    if n_C is not None and n_C != len(m.controls):
        raise ParameterError(f"n_C={n_C} does not match the match result ({len(m.controls)} controls)")
    col = {int(j): i for i, j in enumerate(m.controls)}
    w = np.zeros(len(m.controls))
    K = np.zeros(len(m.controls), dtype=np.int64)
    N = 0
    for c in m.clusters:
        idx = [col[int(j)] for j in c.controls]
        np.add.at(w, idx, c.weights)
        np.add.at(K, idx, 1)
        N += len(c)
    return WeightAggregate(w, K, N, ess(w))


def shared_controls(clusters: Sequence[Cluster]) -> np.ndarray:
    """For each cluster, how many of its controls also sit in another cluster."""
    counts: dict[int, int] = {}
    for c in clusters:
        for j in c.controls:
            counts[int(j)] = counts.get(int(j), 0) + 1
    return np.array([sum(counts[int(j)] > 1 for j in c.controls) for c in clusters], dtype=float)


def sharing_treated(clusters: Sequence[Cluster]) -> np.ndarray:
    """For each cluster, how many other clusters share at least one control with it."""
    if not clusters:
        return np.empty(0)
    ids = np.unique(np.concatenate([c.controls for c in clusters]))
    inc = np.zeros((len(clusters), len(ids)))
    for r, c in enumerate(clusters):
        inc[r, np.searchsorted(ids, c.controls)] = 1.0
    overlap = (inc @ inc.T) > 0
    return overlap.sum(axis=1) - 1.0


def cluster_radii(m: MatchResult) -> np.ndarray:
    basis = m.basis
    return np.array(
        [np.sqrt(((basis[c.controls] - basis[c.treated]) ** 2).sum(axis=1)).max() for c in m.matched]
    )


def diagnostics(m: MatchResult, d: Dataset) -> MatchDiagnostics:
    """Matching radii, both control-sharing counts and the scaled-radius tail."""
    matched = m.matched
    radii = cluster_radii(m) if matched else np.empty(0)
    shared = float(shared_controls(matched).mean()) if matched else float("nan")
    sharing = float(sharing_treated(matched).mean()) if matched else float("nan")
    k = m.basis.shape[1]
    scaled = d.n_control ** (1.0 / k) * radii
    if len(scaled):
        tail = np.array([(scaled > u).mean() for u in TAIL_GRID])
    else:
        tail = np.full(len(TAIL_GRID), np.nan)
    return MatchDiagnostics(radii, shared, sharing, tail, len(m.unmatched))
