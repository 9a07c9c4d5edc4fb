"""Variance estimators and confidence intervals for matching estimates.

Two scalings appear here. ``ve_hat`` and ``VarianceReport.v_per_estimate``
are variances of the point estimate itself. ``VarianceReport.v_total_hat``
is the n_T-scaled variance of sqrt(n_T) * (estimate - target); divide by
n_T before building an interval.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .data import Dataset, split_by_treatment
from .errors import EstimationError, ParameterError
from .estimators import AttEstimate
from .matching import MatchResult, aggregate_weights, feature_basis

MAMMEN_LOW = -(np.sqrt(5.0) - 1.0) / 2.0
MAMMEN_HIGH = (np.sqrt(5.0) + 1.0) / 2.0
MAMMEN_P_LOW = (np.sqrt(5.0) + 1.0) / (2.0 * np.sqrt(5.0))


class CIMethod(str, enum.Enum):
    WALD_POOLED = "WaldPooled"
    WALD_AI06 = "WaldAI06"
    WILD_BOOTSTRAP = "WildBootstrap"


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float = 0.95
    method: CIMethod = CIMethod.WALD_POOLED

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class VarianceReport:
    s2_pooled: float
    ess: float
    ve_hat: float
    v_total_hat: float  # floored at 0, n_T scale
    v_total_raw: float
    vp_hat_implied: float  # V_hat / n_T - V_hat_E, may be negative
    vp_hat_floored: float
    floored: bool
    n_singleton_clusters: int
    n_T: int

    @property
    def v_per_estimate(self) -> float:
        return self.v_total_hat / self.n_T


def cluster_variance(outcomes) -> float:
    """Sample variance (ddof=1) of one cluster's control outcomes."""
    y = np.asarray(outcomes, dtype=float)
    if y.size < 2:
        raise ParameterError("cluster variance needs at least 2 controls")
    return float(np.var(y, ddof=1))


def pooled_variance_parts(y: np.ndarray, m: MatchResult) -> tuple[float, int, int]:
    """(S^2, N_C over non-singleton clusters, number of singleton clusters)."""
    num = 0.0
    N = 0
    singletons = 0
    for c in m.matched:
        size = len(c)
        if size < 2:
            singletons += 1
            continue
        num += size * cluster_variance(y[c.controls])
        N += size
    if N == 0:
        raise EstimationError("pooled variance undefined: all clusters singleton")
    return num / N, N, singletons


def pooled_variance(m: MatchResult, d: Dataset) -> float:
    """Size-weighted mean of within-cluster control variances, singletons excluded."""
    return pooled_variance_parts(d.outcomes, m)[0]


def ve_hat(s2: float, n_T: int, ess: float) -> float:
    """Plug-in noise-variance component S^2 (1/n_T + 1/ESS)."""
    if s2 < 0 or n_T < 1 or not ess >= 1 - 1e-12:
        raise ParameterError(f"need s2 >= 0, n_T >= 1, ess >= 1 (got {s2}, {n_T}, {ess})")
    return s2 * (1.0 / n_T + 1.0 / ess)


def reuse_correction(m: MatchResult) -> float:
    """sum_j [(sum_t w_jt)^2 - sum_t w_jt^2]; nonnegative for w_jt >= 0."""
    W = m.weight_matrix()
    return float(((W.sum(axis=0)) ** 2 - (W**2).sum(axis=0)).sum())


def v_total_hat(d: Dataset, m: MatchResult, est: AttEstimate, s2: Optional[float] = None) -> VarianceReport:
    """Total variance estimate combining squared deviations with a reuse correction.

    V_hat = (1/n_T) sum_t (tau_t - tau)^2 + S^2 (1/n_T) sum_j [w_j^2 - sum_t w_jt^2],
    where tau_t are the (possibly debiased) per-treated contributions in ``est``.
    """
    singletons = 0
    if s2 is None:
        s2, _, singletons = pooled_variance_parts(d.outcomes, m)
    else:
        singletons = sum(1 for c in m.matched if len(c) == 1)
    n_T = est.n_T_used
    if n_T != m.n_matched:
        raise ParameterError("estimate and match result disagree on the matched treated units")
    dev = float(np.mean((est.contributions - est.tau_tilde) ** 2))
    raw = dev + s2 * reuse_correction(m) / n_T
    agg = aggregate_weights(m)
    ve = ve_hat(s2, n_T, agg.ess)
    vp = raw / n_T - ve
    floored = raw < 0
    v = max(raw, 0.0)
    return VarianceReport(s2, agg.ess, ve, v, raw, vp, max(vp, 0.0), floored, singletons, n_T)


# --------------------------------------------------------------------------
# Abadie-Imbens comparator


def _same_group_sigma2(basis: np.ndarray, y: np.ndarray, rank: np.ndarray, M: int) -> np.ndarray:
    """M/(M+1) * (Y_i - mean of its M nearest same-group neighbours)^2."""
    dist = cdist(basis, basis)
    np.fill_diagonal(dist, np.inf)
    order = np.lexsort((np.broadcast_to(rank, dist.shape), dist), axis=-1)[:, :M]
    nbr_mean = y[order].mean(axis=1)
    return M / (M + 1.0) * (y - nbr_mean) ** 2


def ai06_sigma2(d: Dataset, M: int, metric: str = "euclidean", basis: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-unit conditional variance estimates from same-treatment-status neighbours."""
    if basis is None:
        basis = feature_basis(d, metric)
    treated, controls = map(np.asarray, split_by_treatment(d))
    for name, grp in (("treated", treated), ("control", controls)):
        if len(grp) < M + 1:
            raise ParameterError(f"{name} group has {len(grp)} units; need at least M+1={M + 1}")
    sig = np.empty(d.n)
    rank = d.id_rank
    for grp in (treated, controls):
        sig[grp] = _same_group_sigma2(basis[grp], d.outcomes[grp], rank[grp], M)
    return sig


def ai06_variance(d: Dataset, m: MatchResult, M: int) -> float:
    """(1/n_T^2) [sum_t sigma_t^2 + sum_j w_j^2 sigma_j^2] with neighbour-based sigmas."""
    sig = ai06_sigma2(d, M, basis=m.basis)
    treated = np.array([c.treated for c in m.matched])
    if len(treated) == 0:
        raise EstimationError("no treated unit has a matched control")
    agg = aggregate_weights(m)
    n_T = len(treated)
    return float((sig[treated].sum() + agg.total_weight**2 @ sig[m.controls]) / n_T**2)


# --------------------------------------------------------------------------
# intervals


def z_value(level: float) -> float:
    if not 0 < level < 1:
        raise ParameterError(f"level must lie in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))


def wald_ci(point: float, variance: float, level: float = 0.95, method: CIMethod = CIMethod.WALD_POOLED) -> ConfidenceInterval:
    """point +/- z * sqrt(variance), ``variance`` being the per-estimate variance."""
    if variance < 0:
        raise ParameterError(f"variance must be >= 0, got {variance}")
    half = z_value(level) * float(np.sqrt(variance))
    return ConfidenceInterval(float(point - half), float(point + half), level, method)


def multipliers(rng: np.random.Generator, size, law: str = "rademacher") -> np.ndarray:
    if law == "rademacher":
        return rng.integers(0, 2, size=size) * 2.0 - 1.0
    if law == "mammen":
        return np.where(rng.random(size) < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)
    raise ParameterError(f"unknown multiplier law {law!r}")


def bootstrap_draws(est: AttEstimate, B: int, seed: int, law: str = "rademacher") -> np.ndarray:
    """tau* = tau_tilde + (1/n_T) sum_t eta_t R_t for B multiplier draws."""
    rng = np.random.default_rng(seed)
    eta = multipliers(rng, (B, est.n_T_used), law)
    return est.tau_tilde + eta @ est.residuals / est.n_T_used


def percentile_interval(draws: np.ndarray, level: float) -> tuple[float, float]:
    alpha = 1.0 - level
    lo, hi = np.quantile(draws, [alpha / 2.0, 1.0 - alpha / 2.0], method="inverted_cdf")
    return float(lo), float(hi)


def wild_bootstrap_ci(est: AttEstimate, B: int = 999, seed: int = 0, level: float = 0.95, law: str = "rademacher") -> ConfidenceInterval:
    """Percentile interval of the multiplier bootstrap on debiased residuals."""
    if est.n_T_used < 2:
        raise ParameterError("wild bootstrap needs at least 2 matched treated units")
    if B < 100:
        raise ParameterError(f"B must be >= 100, got {B}")
    lo, hi = percentile_interval(bootstrap_draws(est, B, seed, law), level)
    return ConfidenceInterval(lo, hi, level, CIMethod.WILD_BOOTSTRAP)
