"""One-call estimation plus inference, shared by the CLI and the simulation harness."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import EstimationError, ParameterError
from .estimators import AttEstimate, debiased_att, fit_control_model, sbw_weights
from .matching import (
    MatchResult,
    diagnostics,
    ess,
    match_mnn,
    match_propensity,
    match_radius,
    scm_weights,
)
from .variance import (
    CIMethod,
    ConfidenceInterval,
    ai06_variance,
    pooled_variance_parts,
    v_total_hat,
    ve_hat,
    wald_ci,
    wild_bootstrap_ci,
)

MATCHERS = ("mnn", "radius", "scm", "propensity", "sbw")
VARIANCES = ("pooled", "pooled_ve", "ai06", "bootstrap")

# sub-seed purposes, mixed with the caller's seed through SeedSequence
_CROSSFIT = 1
_BOOTSTRAP = 2


def derived_seed(seed: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), purpose]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MethodConfig:
    """A matcher plus a variance method.

    ``variance`` is one of
      pooled     Wald interval with the total variance V_hat / n_T
                 (the noise part V_hat_E alone for ``sbw``, which has no
                 per-treated contributions)
      pooled_ve  Wald interval with the noise part V_hat_E only
      ai06       Wald interval with the neighbour-based comparator
      bootstrap  percentile interval of the wild bootstrap

    For ``sbw`` the weights come from the balancing program and S^2 from an
    M-nearest-neighbour match in ``metric``.
    """

    name: str = "pooled"
    matcher: str = "mnn"
    variance: str = "pooled"
    M: int = 8
    c: float = 1.0
    min_controls: int = 0
    metric: str = "euclidean"
    debias: bool = True
    B: int = 999
    law: str = "rademacher"
    delta: float = 0.0
    standardize: bool = False
    ai06_M: int = 1

    def __post_init__(self):
        if self.matcher not in MATCHERS:
            raise ParameterError(f"unknown matcher {self.matcher!r}; choose from {MATCHERS}")
        if self.variance not in VARIANCES:
            raise ParameterError(f"unknown variance method {self.variance!r}; choose from {VARIANCES}")
        if self.matcher == "sbw" and self.variance in ("ai06", "bootstrap"):
            raise ParameterError(f"variance {self.variance!r} needs matched clusters; use pooled with sbw")
        if self.M < 1 or self.ai06_M < 1 or self.min_controls < 0:
            raise ParameterError("M and ai06_M must be >= 1, min_controls >= 0")
        if self.B < 100:
            raise ParameterError(f"B must be >= 100, got {self.B}")
        if self.law not in ("rademacher", "mammen"):
            raise ParameterError(f"unknown multiplier law {self.law!r}")

    def match_key(self) -> tuple:
        """Configs with equal keys produce identical matches on the same data."""
        if self.matcher in ("mnn", "sbw"):
            return ("mnn", self.M, self.metric)
        if self.matcher == "propensity":
            return ("propensity", self.M)
        return (self.matcher, self.c, self.min_controls, self.metric)


@dataclass(frozen=True)
class InferenceReport:
    method: str  # interval tag: WaldPooled, WaldAI06 or WildBootstrap
    config_name: str
    matcher: str
    variance: str
    tau_hat: float
    tau_tilde: float
    debiased: bool
    n_treated: int
    n_treated_used: int
    n_unmatched: int
    s2_pooled: float
    ess: float
    ve_hat: float
    vp_hat: float
    v_total_hat: float  # n_T scale; divide by n_T for the per-estimate variance
    floored: bool
    n_singleton_clusters: int
    se: float
    ci_lower: float
    ci_upper: float
    level: float
    mean_shared_controls: float
    mean_sharing_treated: float

    @property
    def ci(self) -> ConfidenceInterval:
        return ConfidenceInterval(self.ci_lower, self.ci_upper, self.level)

    def to_dict(self) -> dict:
        return asdict(self)


def build_match(d: Dataset, cfg: MethodConfig) -> MatchResult:
    """The match a config uses (for ``sbw``, the one behind S^2)."""
    if cfg.matcher in ("mnn", "sbw"):
        return match_mnn(d, cfg.M, cfg.metric)
    if cfg.matcher == "propensity":
        return match_propensity(d, cfg.M)
    base = match_radius(d, cfg.c, cfg.metric, cfg.min_controls)
    if cfg.matcher == "radius":
        return base
    return scm_weights(d, base)


@dataclass(frozen=True, eq=False)
class PointEstimate:
    """Everything computed before any variance step."""

    config: MethodConfig
    match: MatchResult
    estimate: Optional[AttEstimate]  # None for sbw
    tau_hat: float
    tau_tilde: float
    sbw_ess: float = float("nan")


def point_estimate(d: Dataset, cfg: MethodConfig, seed: int, match: Optional[MatchResult] = None) -> PointEstimate:
    m = match if match is not None else build_match(d, cfg)
    if cfg.matcher == "sbw":
        sol = sbw_weights(d, cfg.delta, cfg.standardize)
        tau = sol.estimate(d)
        return PointEstimate(cfg, m, None, tau, tau, ess(sol.weights))
    cm = fit_control_model(d, derived_seed(seed, _CROSSFIT)) if cfg.debias else None
    est = debiased_att(d, m, cm)
    return PointEstimate(cfg, m, est, est.tau_hat, est.tau_tilde)


def _nan() -> float:
    return float("nan")


def infer(
    d: Dataset,
    cfg: MethodConfig,
    seed: int,
    level: float = 0.95,
    match: Optional[MatchResult] = None,
    point: Optional[PointEstimate] = None,
) -> InferenceReport:
    """Point estimate, variance components and a confidence interval."""
    pe = point if point is not None else point_estimate(d, cfg, seed, match)
    m = pe.match
    diag = diagnostics(m, d)
    n_used = pe.estimate.n_T_used if pe.estimate is not None else d.n_treated

    s2 = ess_val = ve = vp = vt = _nan()
    floored = False
    singletons = sum(1 for c in m.matched if len(c) == 1)
    pooled_needed = cfg.variance in ("pooled", "pooled_ve")
    try:
        s2, _, singletons = pooled_variance_parts(d.outcomes, m)
    except EstimationError:
        if pooled_needed:
            raise

    if not math.isnan(s2):
        if pe.estimate is None:
            ess_val = pe.sbw_ess
            ve = ve_hat(s2, d.n_treated, ess_val)
        else:
            rep = v_total_hat(d, m, pe.estimate, s2)
            ess_val, ve, vp, vt, floored = rep.ess, rep.ve_hat, rep.vp_hat_floored, rep.v_total_hat, rep.floored

    point_val = pe.tau_tilde
    if cfg.variance == "pooled":
        var = ve if pe.estimate is None else vt / n_used
        ci = wald_ci(point_val, var, level, CIMethod.WALD_POOLED)
        se = math.sqrt(var)
    elif cfg.variance == "pooled_ve":
        ci = wald_ci(point_val, ve, level, CIMethod.WALD_POOLED)
        se = math.sqrt(ve)
    elif cfg.variance == "ai06":
        var = ai06_variance(d, m, cfg.ai06_M)
        ci = wald_ci(point_val, var, level, CIMethod.WALD_AI06)
        se = math.sqrt(var)
    else:
        ci = wild_bootstrap_ci(pe.estimate, cfg.B, derived_seed(seed, _BOOTSTRAP), level, cfg.law)
        se = float(np.std(pe.estimate.residuals) / math.sqrt(n_used))

    return InferenceReport(
        method=ci.method.value,
        config_name=cfg.name,
        matcher=cfg.matcher,
        variance=cfg.variance,
        tau_hat=pe.tau_hat,
        tau_tilde=pe.tau_tilde,
        debiased=pe.estimate is not None and pe.estimate.debiased,
        n_treated=d.n_treated,
        n_treated_used=n_used,
        n_unmatched=diag.n_unmatched,
        s2_pooled=s2,
        ess=ess_val,
        ve_hat=ve,
        vp_hat=vp,
        v_total_hat=vt,
        floored=floored,
        n_singleton_clusters=singletons,
        se=se,
        ci_lower=ci.lower,
        ci_upper=ci.upper,
        level=level,
        mean_shared_controls=diag.mean_shared_controls,
        mean_sharing_treated=diag.mean_sharing_treated,
    )
