"""Data-generating processes used in the coverage experiments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit
from scipy.stats import multivariate_normal

from ..data import Dataset, TruthInfo
from ..errors import ParameterError

# --------------------------------------------------------------------------
# Otsu-Rai: two covariates on the unit quarter disc, wiggly radial outcome


def otsu_rai_curve(r):
    """m(z) = 0.4 + 0.25 sin(8z - 5) + 0.4 exp(-16 (4z - 2.5)^2)."""
    r = np.asarray(r, dtype=float)
    return 0.4 + 0.25 * np.sin(8.0 * r - 5.0) + 0.4 * np.exp(-16.0 * (4.0 * r - 2.5) ** 2)


def otsu_rai_surface(X):
    return otsu_rai_curve(np.linalg.norm(np.atleast_2d(X), axis=1))


@dataclass(frozen=True)
class OtsuRaiParams:
    gamma1: float = 0.15
    gamma2: float = 0.7
    tau: float = 0.0
    noise_sd: float = 0.2
    # when both are set, units are drawn until exactly this many of each arm exist
    n_treated: Optional[int] = None
    n_control: Optional[int] = None

    def __post_init__(self):
        for g in (self.gamma1, self.gamma2):
            if not 0 < g < 1:
                raise ParameterError(f"Otsu-Rai gammas must lie in (0, 1), got {g}")
        if (self.n_treated is None) != (self.n_control is None):
            raise ParameterError("set both n_treated and n_control, or neither")


def _otsu_rai_draw(rng, size, p: OtsuRaiParams):
    xi = rng.uniform(size=size)
    zeta = rng.standard_normal((size, 2))
    X = xi[:, None] * np.abs(zeta) / np.linalg.norm(zeta, axis=1, keepdims=True)
    prop = p.gamma1 + p.gamma2 * np.linalg.norm(X, axis=1)
    z = (prop >= rng.uniform(size=size)).astype(np.int8)
    eps = rng.normal(0.0, p.noise_sd, size)
    return X, z, eps


def gen_otsu_rai(n: int = 100, seed: int = 0, params: Optional[OtsuRaiParams] = None):
    """Draw ``n`` i.i.d. units (or a fixed n_T / n_C split when requested)."""
    p = params or OtsuRaiParams()
    rng = np.random.default_rng(seed)
    if p.n_treated is None:
        if n < 4:
            raise ParameterError(f"n must be >= 4, got {n}")
        X, z, eps = _otsu_rai_draw(rng, n, p)
    else:
        Xs, zs, es = [], [], []
        n_t = n_c = 0
        while n_t < p.n_treated or n_c < p.n_control:
            Xb, zb, eb = _otsu_rai_draw(rng, 4 * (p.n_treated + p.n_control), p)
            Xs.append(Xb)
            zs.append(zb)
            es.append(eb)
            n_t += int(zb.sum())
            n_c += int((1 - zb).sum())
        X, z, eps = np.vstack(Xs), np.concatenate(zs), np.concatenate(es)
        t_idx = np.flatnonzero(z == 1)[: p.n_treated]
        c_idx = np.flatnonzero(z == 0)[: p.n_control]
        keep = np.sort(np.r_[t_idx, c_idx])
        X, z, eps = X[keep], z[keep], eps[keep]
    f0 = otsu_rai_surface(X)
    y = f0 + p.tau * z + eps
    tau = np.full(len(y), p.tau)
    truth = TruthInfo(f0, tau, p.noise_sd, float(tau[z == 1].mean()) if z.any() else float("nan"), p.tau, otsu_rai_surface)
    return Dataset(X, y, z), truth


# --------------------------------------------------------------------------
# Che et al.: correlated 4-d normal covariates, density outcome surface

OVERLAP_SHIFTS = {
    "very_low": 0.8,
    "low": 0.6,
    "medium": 0.4,
    "high": 0.2,
    "very_high": 0.0,
}
OVERLAP_LEVELS = tuple(OVERLAP_SHIFTS)

CHE_MEAN = np.full(4, 0.5)
CHE_COV = np.full((4, 4), 0.8) + 0.2 * np.eye(4)
_CHE_MVN = multivariate_normal(CHE_MEAN, CHE_COV)


def che_surface(X):
    """Control surface: the N(0.5 * 1, Sigma) density."""
    return np.atleast_1d(_CHE_MVN.pdf(np.atleast_2d(X)))


def che_tau(X):
    return 3.0 * np.atleast_2d(X).sum(axis=1)


@dataclass(frozen=True)
class CheParams:
    n_treated: int = 100
    n_control: int = 500
    noise_sd: float = 0.5
    shift: Optional[float] = None  # overrides the overlap level's shift


def overlap_shift(overlap: str, params: Optional[CheParams] = None) -> float:
    if params is not None and params.shift is not None:
        return float(params.shift)
    try:
        return OVERLAP_SHIFTS[overlap]
    except KeyError:
        raise ParameterError(f"unknown overlap level {overlap!r}; choose from {OVERLAP_LEVELS}") from None


def che_population_att(shift: float) -> float:
    """E[3 sum X | Z=1] with treated X ~ N((0.5 + shift) 1, Sigma)."""
    return 12.0 * (0.5 + shift)


def gen_che(seed: int = 0, overlap: str = "medium", params: Optional[CheParams] = None):
    """n_T treated and n_C controls; treated covariate mean shifted by the overlap offset."""
    p = params or CheParams()
    shift = overlap_shift(overlap, p)
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(CHE_COV)
    Xt = CHE_MEAN + shift + rng.standard_normal((p.n_treated, 4)) @ L.T
    Xc = CHE_MEAN + rng.standard_normal((p.n_control, 4)) @ L.T
    X = np.vstack([Xt, Xc])
    z = np.r_[np.ones(p.n_treated, dtype=np.int8), np.zeros(p.n_control, dtype=np.int8)]
    f0 = che_surface(X)
    tau = che_tau(X)
    y = f0 + z * tau + rng.normal(0.0, p.noise_sd, len(z))
    truth = TruthInfo(f0, tau, p.noise_sd, float(tau[z == 1].mean()), che_population_att(shift), che_surface)
    return Dataset(X, y, z), truth


def monte_carlo_population_att(shift: float, draws: int = 1_000_000, seed: int = 20240601) -> float:
    """Monte Carlo check of :func:`che_population_att`."""
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(CHE_COV)
    X = CHE_MEAN + shift + rng.standard_normal((draws, 4)) @ L.T
    return float(che_tau(X).mean())


# --------------------------------------------------------------------------
# Kang-Schafer: latent normals observed through nonlinear transforms


def kang_schafer_latent_surface(Zl):
    Zl = np.atleast_2d(Zl)
    return (210.0 + 27.4 * Zl[:, 0] + 13.7 * (Zl[:, 1] + Zl[:, 2] + Zl[:, 3])) / 50.0


def kang_schafer_observe(Zl):
    Zl = np.atleast_2d(Zl)
    z1, z2, z3, z4 = Zl.T
    return np.column_stack(
        [
            np.exp(z1 / 2.0),
            z2 / (1.0 + np.exp(z1)) + 10.0,
            (z1 * z3 / 25.0 + 0.6) ** 3,
            (z2 + z4 + 20.0) ** 2,
        ]
    )


def kang_schafer_invert(X):
    """Recover latent Z from observed X (valid where Z2 + Z4 + 20 > 0)."""
    X = np.atleast_2d(X)
    z1 = 2.0 * np.log(X[:, 0])
    z2 = (X[:, 1] - 10.0) * (1.0 + np.exp(z1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z3 = (np.cbrt(X[:, 2]) - 0.6) * 25.0 / z1
    z4 = np.sqrt(X[:, 3]) - 20.0 - z2
    return np.column_stack([z1, z2, z3, z4])


def kang_schafer_surface(X):
    """Control surface as a function of the observed covariates."""
    return kang_schafer_latent_surface(kang_schafer_invert(X))


def kang_schafer_propensity(Zl):
    Zl = np.atleast_2d(Zl)
    return expit(-(Zl[:, 0] - 0.5 * Zl[:, 1] + 0.25 * Zl[:, 2] + 0.1 * Zl[:, 3]))


def gen_kang_schafer(n: int = 500, seed: int = 0, tau: float = 0.0):
    if n < 8:
        raise ParameterError(f"n must be >= 8, got {n}")
    rng = np.random.default_rng(seed)
    Zl = rng.standard_normal((n, 4))
    p = kang_schafer_propensity(Zl)
    z = (rng.uniform(size=n) < p).astype(np.int8)
    f0 = kang_schafer_latent_surface(Zl)
    y = f0 + tau * z + rng.standard_normal(n)
    X = kang_schafer_observe(Zl)
    taus = np.full(n, float(tau))
    satt = float(taus[z == 1].mean()) if z.any() else float("nan")
    return Dataset(X, y, z), TruthInfo(f0, taus, 1.0, satt, float(tau), kang_schafer_surface)
