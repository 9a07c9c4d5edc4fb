"""Monte Carlo coverage engine, run configuration files and simulation diagnostics."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .. import __version__
from ..data import Dataset, TruthInfo
from ..errors import MatchVarError, ParameterError
from ..inference import MethodConfig, build_match, infer
from ..matching import MatchResult, TAIL_GRID, aggregate_weights, diagnostics
from .dgp import CheParams, OtsuRaiParams, gen_che, gen_kang_schafer, gen_otsu_rai, overlap_shift

FAILURE_FLAG_RATE = 0.05
RNG_ALGORITHM = "PCG64"

_DGP_ALIASES = {
    "otsurai": "OtsuRai",
    "otsu_rai": "OtsuRai",
    "cheetal": "CheEtAl",
    "che_et_al": "CheEtAl",
    "che": "CheEtAl",
    "kangschafer": "KangSchafer",
    "kang_schafer": "KangSchafer",
}

# parameter name -> type, per generator
_DGP_PARAMS = {
    "OtsuRai": {"n": int, "gamma1": float, "gamma2": float, "tau": float, "noise_sd": float, "n_treated": int, "n_control": int},
    "CheEtAl": {"overlap": str, "n_treated": int, "n_control": int, "noise_sd": float, "shift": float},
    "KangSchafer": {"n": int, "tau": float},
}


def canonical_dgp(name: str) -> str:
    key = name.strip().lower()
    if key in _DGP_ALIASES:
        return _DGP_ALIASES[key]
    if name in _DGP_PARAMS:
        return name
    raise ParameterError(f"unknown dgp {name!r}; choose from {sorted(_DGP_PARAMS)}")


def validate_params(dgp: str, params: dict) -> None:
    """Raise ParameterError for a parameter record the generator would reject."""
    dgp = canonical_dgp(dgp)
    unknown = set(params) - set(_DGP_PARAMS[dgp])
    if unknown:
        raise ParameterError(f"unknown {dgp} parameter(s) {sorted(unknown)}")
    p = dict(params)
    if dgp == "OtsuRai":
        if p.pop("n", 100) < 4:
            raise ParameterError("Otsu-Rai n must be >= 4")
        OtsuRaiParams(**p)
    elif dgp == "CheEtAl":
        overlap_shift(p.pop("overlap", "medium"), CheParams(**p))
        if min(p.get("n_treated", 1), p.get("n_control", 1)) < 1:
            raise ParameterError("Che n_treated and n_control must be >= 1")
    elif p.get("n", 500) < 8:
        raise ParameterError("Kang-Schafer n must be >= 8")


def generate(dgp: str, params: dict, seed: int) -> tuple[Dataset, TruthInfo]:
    """One draw from the named generator."""
    dgp = canonical_dgp(dgp)
    validate_params(dgp, params)
    p = dict(params)
    if dgp == "OtsuRai":
        n = p.pop("n", 100)
        return gen_otsu_rai(n, seed, OtsuRaiParams(**p))
    if dgp == "CheEtAl":
        overlap = p.pop("overlap", "medium")
        return gen_che(seed, overlap, CheParams(**p))
    return gen_kang_schafer(p.get("n", 500), seed, p.get("tau", 0.0))


@dataclass(frozen=True)
class SimulationSpec:
    dgp: str
    dgp_params: dict = field(default_factory=dict)
    n_reps: int = 100
    base_seed: int = 0
    methods: tuple = (MethodConfig(),)
    level: float = 0.95
    target: str = "population"  # or "satt"
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dgp", canonical_dgp(self.dgp))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n_reps < 1:
            raise ParameterError(f"n_reps must be >= 1, got {self.n_reps}")
        if not 0 < self.level < 1:
            raise ParameterError(f"level must lie in (0, 1), got {self.level}")
        if self.target not in ("population", "satt"):
            raise ParameterError(f"target must be 'population' or 'satt', got {self.target!r}")
        if not self.methods:
            raise ParameterError("at least one method is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ParameterError(f"method names must be distinct, got {names}")
        if self.threads < 1:
            raise ParameterError(f"threads must be >= 1, got {self.threads}")
        validate_params(self.dgp, self.dgp_params)

    def with_changes(self, **kw) -> "SimulationSpec":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class ReplicationRecord:
    rep: int
    seed: int
    method: str
    estimate: float
    tau_hat: float
    ci_lower: float
    ci_upper: float
    covered: Optional[bool]
    se: float
    satt: float
    population_att: float
    ess: float
    s2_pooled: float
    ve_hat: float
    v_per_estimate: float
    mean_shared_controls: float
    mean_sharing_treated: float
    n_treated: int
    error: str = ""


@dataclass(frozen=True)
class MethodSummary:
    method: str
    n_ok: int
    n_failed: int
    flagged: bool
    coverage: float
    mean_ci_length: float
    mean_se: float
    mean_ess: float
    mean_shared_controls: float
    mean_sharing_treated: float
    mean_v_per_estimate: float
    mean_se_e: float  # mean of sqrt(V_hat_E)
    sd_error_satt: float  # empirical SD of (estimate - SATT)
    mean_error: float  # mean of (estimate - target)


@dataclass(frozen=True, eq=False)
class CoverageReport:
    spec: SimulationSpec
    summaries: dict
    records: tuple
    metadata: dict

    @property
    def flagged(self) -> bool:
        return any(s.flagged for s in self.summaries.values())

    def records_for(self, method: str) -> list:
        return [r for r in self.records if r.method == method]

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "spec": spec_to_dict(self.spec),
            "flagged": self.flagged,
            "methods": {k: asdict(v) for k, v in self.summaries.items()},
        }

    def write_json(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n", encoding="utf-8")

    def write_records_csv(self, path) -> None:
        names = [f.name for f in dataclasses.fields(ReplicationRecord)]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                w.writerow([_csv_cell(getattr(r, n)) for n in names])


def _csv_cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else format(v, ".17g")
    if v is None:
        return ""
    return v


def _json_safe(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, (np.floating,)):
        return _json_safe(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats as null, exact float text."""
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False)


def spec_to_dict(spec: SimulationSpec) -> dict:
    return {
        "dgp": spec.dgp,
        "dgp_params": dict(spec.dgp_params),
        "n_reps": spec.n_reps,
        "base_seed": spec.base_seed,
        "level": spec.level,
        "target": spec.target,
        "methods": [asdict(m) for m in spec.methods],
    }


# --------------------------------------------------------------------------
# engine

_nan = float("nan")


def _failed(rep, seed, method, truth, n_treated, msg) -> ReplicationRecord:
    return ReplicationRecord(rep, seed, method, _nan, _nan, _nan, _nan, None, _nan, truth.satt,
                             truth.population_att, _nan, _nan, _nan, _nan, _nan, _nan, n_treated, msg)


def run_replication(spec: SimulationSpec, rep: int) -> list:
    """All methods on the data set of replication ``rep``."""
    seed = spec.base_seed + rep
    d, truth = generate(spec.dgp, spec.dgp_params, seed)
    target = truth.population_att if spec.target == "population" else truth.satt
    matches: dict = {}
    out = []
    for cfg in spec.methods:
        try:
            key = cfg.match_key()
            if key not in matches:
                try:
                    matches[key] = build_match(d, cfg)
                except (MatchVarError, ValueError, np.linalg.LinAlgError) as exc:
                    matches[key] = exc
            m = matches[key]
            if isinstance(m, Exception):
                raise m
            r = infer(d, cfg, seed, spec.level, match=m)
        except (MatchVarError, ValueError, np.linalg.LinAlgError) as exc:
            out.append(_failed(rep, seed, cfg.name, truth, d.n_treated, f"{type(exc).__name__}: {exc}"))
            continue
        v_per = r.v_total_hat / r.n_treated_used
        out.append(
            ReplicationRecord(
                rep, seed, cfg.name, r.tau_tilde, r.tau_hat, r.ci_lower, r.ci_upper,
                bool(r.ci_lower <= target <= r.ci_upper), r.se, truth.satt, truth.population_att,
                r.ess, r.s2_pooled, r.ve_hat, v_per, r.mean_shared_controls, r.mean_sharing_treated,
                d.n_treated,
            )
        )
    return out


def _run_chunk(spec: SimulationSpec, reps: Sequence[int]) -> list:
    out = []
    for r in reps:
        out.extend(run_replication(spec, r))
    return out


def _mean(xs) -> float:
    xs = np.asarray([x for x in xs if not math.isnan(x)], dtype=float)
    return float(xs.mean()) if xs.size else _nan


def summarize(spec: SimulationSpec, records: Sequence[ReplicationRecord]) -> dict:
    out = {}
    for cfg in spec.methods:
        rs = [r for r in records if r.method == cfg.name]
        ok = [r for r in rs if not r.error]
        n_failed = len(rs) - len(ok)
        tgt = [(r.population_att if spec.target == "population" else r.satt) for r in ok]
        err_satt = np.array([r.estimate - r.satt for r in ok])
        out[cfg.name] = MethodSummary(
            method=cfg.name,
            n_ok=len(ok),
            n_failed=n_failed,
            flagged=n_failed > FAILURE_FLAG_RATE * len(rs),
            coverage=float(np.mean([r.covered for r in ok])) if ok else _nan,
            mean_ci_length=_mean(r.ci_upper - r.ci_lower for r in ok),
            mean_se=_mean(r.se for r in ok),
            mean_ess=_mean(r.ess for r in ok),
            mean_shared_controls=_mean(r.mean_shared_controls for r in ok),
            mean_sharing_treated=_mean(r.mean_sharing_treated for r in ok),
            mean_v_per_estimate=_mean(r.v_per_estimate for r in ok),
            mean_se_e=_mean(math.sqrt(r.ve_hat) if r.ve_hat >= 0 else _nan for r in ok),
            sd_error_satt=float(np.std(err_satt, ddof=1)) if len(ok) > 1 else _nan,
            mean_error=_mean(r.estimate - t for r, t in zip(ok, tgt)),
        )
    return out


def run_coverage(spec: SimulationSpec) -> CoverageReport:
    """Run every replication and aggregate per method.

    Replication r draws its data with seed ``base_seed + r``; the result does
    not depend on ``threads``.
    """
    reps = list(range(spec.n_reps))
    if spec.threads == 1 or spec.n_reps < 2:
        records = _run_chunk(spec, reps)
    else:
        chunks = [reps[i :: spec.threads] for i in range(spec.threads)]
        with ProcessPoolExecutor(max_workers=spec.threads) as pool:
            parts = pool.map(_run_chunk, [spec] * len(chunks), chunks)
            records = [r for part in parts for r in part]
    order = {cfg.name: i for i, cfg in enumerate(spec.methods)}
    records.sort(key=lambda r: (r.rep, order[r.method]))
    metadata = {"rng": RNG_ALGORITHM, "seed_rule": "base_seed + rep", "package_version": __version__,
                "numpy_version": np.__version__}
    return CoverageReport(spec, summarize(spec, records), tuple(records), metadata)


# --------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class CltResult:
    values: np.ndarray
    statistic: float
    pvalue: float


def ks_normal(values) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test against N(0, 1), asymptotic p-value."""
    values = np.asarray(values, dtype=float)
    res = stats.kstest(values, "norm", method="asymp")
    return float(res.statistic), float(res.pvalue)


def standardized_values(report: CoverageReport, method: Optional[str] = None) -> np.ndarray:
    """(estimate - target) / se per successful replication of one method."""
    name = method or report.spec.methods[0].name
    target_pop = report.spec.target == "population"
    vals = [
        (r.estimate - (r.population_att if target_pop else r.satt)) / r.se
        for r in report.records_for(name)
        if not r.error and r.se > 0
    ]
    return np.asarray(vals)


def clt_diagnostic(spec: SimulationSpec, method: Optional[str] = None) -> CltResult:
    """Standardized statistics over replications and their KS test against N(0, 1)."""
    if spec.n_reps < 100:
        raise ParameterError(f"the CLT diagnostic needs at least 100 replications, got {spec.n_reps}")
    vals = standardized_values(run_coverage(spec), method)
    stat, p = ks_normal(vals)
    return CltResult(vals, stat, p)


@dataclass(frozen=True)
class AssumptionDiagnostics:
    available: bool
    derivative_control: float  # max_t (max gradient norm on {t} + C_t) * r(C_t)
    derivative_control_mean: float
    scaled_radius_tail: np.ndarray
    tail_grid: np.ndarray


def gradient_norms(f, X: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Centred finite-difference gradient norms of ``f`` at the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, k = X.shape
    g = np.empty((n, k))
    for j in range(k):
        h = rel_step * np.maximum(1.0, np.abs(X[:, j]))
        up, dn = X.copy(), X.copy()
        up[:, j] += h
        dn[:, j] -= h
        g[:, j] = (f(up) - f(dn)) / (2.0 * h)
    return np.linalg.norm(g, axis=1)


def assumption_diagnostics(d: Dataset, m: MatchResult, truth: Optional[TruthInfo]) -> AssumptionDiagnostics:
    """Derivative-control statistic and the scaled matching-radius tail.

    Radii and gradients are taken in the raw covariate space.
    """
    tail = diagnostics(m, d).scaled_radius_tail
    matched = m.matched
    if truth is None or truth.f0 is None or not matched:
        return AssumptionDiagnostics(False, _nan, _nan, tail, TAIL_GRID.copy())
    X = d.covariates
    with np.errstate(all="ignore"):
        grad = gradient_norms(truth.f0, X)
    stat = []
    for c in matched:
        members = np.r_[c.treated, c.controls]
        r = float(np.sqrt(((X[c.controls] - X[c.treated]) ** 2).sum(axis=1)).max())
        stat.append(float(np.nanmax(grad[members])) * r)
    stat = np.asarray(stat)
    return AssumptionDiagnostics(True, float(stat.max()), float(stat.mean()), tail, TAIL_GRID.copy())


def oracle_ve(m: MatchResult, noise_sd: float) -> float:
    """Noise variance component from the true homoskedastic noise level.

    sigma^2 (1/n_T + sum_j w_j^2 / n_T^2) over the matched treated units.
    """
    n_T = m.n_matched
    w = aggregate_weights(m).total_weight
    return float(noise_sd**2 * (1.0 / n_T + (w @ w) / n_T**2))


# --------------------------------------------------------------------------
# configuration files

_TOP = "__top__"
_TOP_KEYS = {"dgp": str, "n_reps": int, "base_seed": int, "level": float, "target": str, "threads": int}


def _coerce(kind, text: str, where: str):
    try:
        if kind is bool:
            low = text.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind is float:
            return float(text)
        if kind is int:
            return int(text)
        return text.strip()
    except ValueError:
        raise ParameterError(f"{where}: cannot read {text!r} as {kind.__name__}") from None


_METHOD_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def parse_spec(text: str, source: str = "<config>") -> SimulationSpec:
    """Read a run configuration.

    Top-level ``key = value`` lines set the run (dgp, n_reps, base_seed,
    level, target, threads); a ``[dgp]`` section holds generator parameters
    and each ``[method NAME]`` section one method. ``#`` starts a comment.
    """
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None, default_section="__defaults__")
    cp.optionxform = str
    try:
        cp.read_string(f"[{_TOP}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ParameterError(f"{source}: {exc}") from None

    top = {}
    for k, v in cp[_TOP].items():
        if k not in _TOP_KEYS:
            raise ParameterError(f"{source}: unknown key {k!r}")
        top[k] = _coerce(_TOP_KEYS[k], v, f"{source}: {k}")
    if "dgp" not in top:
        raise ParameterError(f"{source}: missing required key 'dgp'")
    dgp = canonical_dgp(top["dgp"])

    params = {}
    methods = []
    method_fields = {f.name: _METHOD_TYPES[f.type] for f in dataclasses.fields(MethodConfig)}
    for sec in cp.sections():
        if sec == _TOP:
            continue
        if sec == "dgp":
            schema = _DGP_PARAMS[dgp]
            for k, v in cp[sec].items():
                if k not in schema:
                    raise ParameterError(f"{source}: unknown {dgp} parameter {k!r}")
                params[k] = _coerce(schema[k], v, f"{source}: [dgp] {k}")
        elif sec.startswith("method "):
            name = sec[len("method ") :].strip()
            kw = {"name": name}
            for k, v in cp[sec].items():
                if k not in method_fields or k == "name":
                    raise ParameterError(f"{source}: [{sec}] unknown key {k!r}")
                kw[k] = _coerce(method_fields[k], v, f"{source}: [{sec}] {k}")
            methods.append(MethodConfig(**kw))
        else:
            raise ParameterError(f"{source}: unknown section [{sec}]")
    if not methods:
        raise ParameterError(f"{source}: no [method NAME] section")
    top.pop("dgp")
    return SimulationSpec(dgp=dgp, dgp_params=params, methods=tuple(methods), **top)


def packaged_configs() -> list:
    root = resources.files("matchvar.simulation") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_spec(path_or_name) -> SimulationSpec:
    """Read a configuration file, or a packaged one by bare name (e.g. ``otsu_rai``)."""
    p = Path(path_or_name)
    if p.exists():
        return parse_spec(p.read_text(encoding="utf-8"), str(p))
    name = str(path_or_name)
    if name in packaged_configs():
        res = resources.files("matchvar.simulation") / "configs" / f"{name}.cfg"
        return parse_spec(res.read_text(encoding="utf-8"), f"{name}.cfg")
    raise FileNotFoundError(f"no such configuration file: {path_or_name}")
