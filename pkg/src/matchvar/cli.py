"""Command-line entry point: ``matchvar estimate | simulate | diagnose``.

Exit codes: 0 success, 1 estimation or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import load_csv
from .errors import MatchVarError
from .estimators import att_estimate, sbw_weights
from .inference import MATCHERS, MethodConfig, build_match, infer
from .matching import aggregate_weights, diagnostics, ess
from .simulation.coverage import dumps, load_spec, run_coverage

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CLI_VARIANCES = ("pooled", "pooled_ve", "ai06", "bootstrap")

# flags that only make sense with some matchers / variance methods
_MATCHER_ONLY = {
    "M": ("mnn", "propensity", "sbw"),
    "c": ("radius", "scm"),
    "min_controls": ("radius", "scm"),
    "metric": ("mnn", "radius", "scm", "sbw"),
    "delta": ("sbw",),
    "standardize": ("sbw",),
}
_VARIANCE_ONLY = {"B": ("bootstrap",), "law": ("bootstrap",), "ai06_M": ("ai06",)}


@dataclass(frozen=True)
class RunPlan:
    command: str
    output_dir: Path
    input: Optional[Path] = None
    config: Optional[str] = None
    outcome_col: Optional[str] = None
    treatment_col: Optional[str] = None
    covariates: Optional[tuple] = None
    id_col: Optional[str] = None
    method: Optional[MethodConfig] = None
    seed: Optional[int] = None
    level: float = 0.95
    threads: int = 1


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, type=Path, help="CSV file with a header row")
    p.add_argument("--outcome-col", required=True)
    p.add_argument("--treatment-col", required=True)
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all other columns)")
    p.add_argument("--id-col", help="unit id column (default: row index)")


def _add_matcher_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--matcher", required=True, choices=MATCHERS)
    p.add_argument("--M", type=_positive_int, help="neighbours per treated unit (default 8)")
    p.add_argument("--c", type=float, help="radius constant, radius = c * n_C^(-1/k) (default 1)")
    p.add_argument("--min-controls", type=int, help="adaptive caliper floor for radius/scm (default 0)")
    p.add_argument("--metric", choices=("euclidean", "standardized"))
    p.add_argument("--delta", type=float, help="balance tolerance for sbw (default 0)")
    p.add_argument("--standardize", action="store_true", default=None, help="sbw: balance in SD units")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchvar", allow_abbrev=False, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"matchvar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", allow_abbrev=False, help="ATT estimate and confidence interval for a CSV file")
    _add_data_flags(est)
    _add_matcher_flags(est)
    est.add_argument("--variance", required=True, choices=CLI_VARIANCES)
    est.add_argument("--seed", required=True, type=int)
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--no-debias", action="store_true", help="skip the cross-fitted regression adjustment")
    est.add_argument("--B", type=_positive_int, help="bootstrap draws (default 999)")
    est.add_argument("--law", choices=("rademacher", "mammen"), help="bootstrap multiplier law")
    est.add_argument("--ai06-M", type=_positive_int, help="same-group neighbours for ai06 (default 1)")
    est.add_argument("--output-dir", type=Path, default=Path("."))
    est.add_argument("--threads", type=_positive_int)

    sim = sub.add_parser("simulate", allow_abbrev=False, help="Monte Carlo coverage study from a config file")
    sim.add_argument("--config", required=True, help="config file, or the name of a packaged config")
    sim.add_argument("--output-dir", type=Path, default=Path("."))
    sim.add_argument("--threads", type=_positive_int)

    dia = sub.add_parser("diagnose", allow_abbrev=False, help="matching diagnostics for a CSV file")
    _add_data_flags(dia)
    _add_matcher_flags(dia)
    dia.add_argument("--output-dir", type=Path, default=Path("."))
    dia.add_argument("--threads", type=_positive_int)
    parser.commands = {"estimate": est, "simulate": sim, "diagnose": dia}
    return parser


def _threads(arg: Optional[int], parser) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("MATCHVAR_THREADS")
    if env is None:
        return 1
    try:
        v = int(env)
        if v < 1:
            raise ValueError
    except ValueError:
        parser.error(f"MATCHVAR_THREADS must be a positive integer, got {env!r}")
    return v


def _method_from_args(ns, parser, with_variance: bool) -> MethodConfig:
    for flag, allowed in _MATCHER_ONLY.items():
        if getattr(ns, flag, None) is not None and ns.matcher not in allowed:
            parser.error(f"--{flag.replace('_', '-')} cannot be used with --matcher {ns.matcher}")
    kw = {"matcher": ns.matcher, "name": ns.matcher}
    for flag in ("M", "c", "min_controls", "metric", "delta", "standardize"):
        if getattr(ns, flag, None) is not None:
            kw[flag] = getattr(ns, flag)
    if with_variance:
        for flag, allowed in _VARIANCE_ONLY.items():
            if getattr(ns, flag, None) is not None and ns.variance not in allowed:
                parser.error(f"--{flag.replace('_', '-')} cannot be used with --variance {ns.variance}")
        if ns.matcher == "sbw" and ns.variance in ("ai06", "bootstrap"):
            parser.error(f"--variance {ns.variance} cannot be used with --matcher sbw")
        kw["variance"] = ns.variance
        kw["debias"] = not ns.no_debias
        for flag in ("B", "law", "ai06_M"):
            if getattr(ns, flag, None) is not None:
                kw[flag] = getattr(ns, flag)
    try:
        return MethodConfig(**kw)
    except MatchVarError as exc:
        parser.error(str(exc))


def parse_args(argv: Optional[Sequence[str]] = None) -> RunPlan:
    """Parse ``argv`` into a RunPlan; usage errors exit with status 2."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    parser = parser.commands[ns.command]  # later usage errors name the subcommand
    threads = _threads(ns.threads, parser)
    if ns.command == "simulate":
        return RunPlan("simulate", ns.output_dir, config=ns.config, threads=threads)
    covs = tuple(c.strip() for c in ns.covariates.split(",")) if ns.covariates else None
    common = dict(
        output_dir=ns.output_dir,
        input=ns.input,
        outcome_col=ns.outcome_col,
        treatment_col=ns.treatment_col,
        covariates=covs,
        id_col=ns.id_col,
        threads=threads,
    )
    if ns.command == "estimate":
        if not 0 < ns.level < 1:
            parser.error(f"--level must lie in (0, 1), got {ns.level}")
        return RunPlan("estimate", method=_method_from_args(ns, parser, True), seed=ns.seed, level=ns.level, **common)
    return RunPlan("diagnose", method=_method_from_args(ns, parser, False), **common)


# --------------------------------------------------------------------------
# execution


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _write_outputs(plan: RunPlan, report: dict, extra: Optional[dict] = None) -> None:
    out = plan.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(report) + "\n", encoding="utf-8")
    for name, writer in (extra or {}).items():
        writer(out / name)
    # timestamps live only here, never in report.json
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    with (out / "run.log").open("a", encoding="utf-8") as fh:
        fh.write(f"{stamp} matchvar {__version__} {plan.command}\n")


def _load(plan: RunPlan):
    return load_csv(plan.input, plan.outcome_col, plan.treatment_col, plan.covariates, plan.id_col)


def _input_record(plan: RunPlan, d) -> dict:
    return {"path": str(plan.input), "n": d.n, "k": d.k, "n_treated": d.n_treated, "n_control": d.n_control}


def _estimate(plan: RunPlan) -> int:
    d = _load(plan)
    cfg = plan.method
    m = build_match(d, cfg)
    raw = sbw_weights(d, cfg.delta, cfg.standardize).estimate(d) if cfg.matcher == "sbw" else att_estimate(d, m)
    try:
        rep = infer(d, cfg, plan.seed, plan.level, match=m)
    except (MatchVarError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"tau_hat={_fmt(raw)} inference=failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = {
        **rep.to_dict(),
        "seed": plan.seed,
        "config": asdict(cfg),
        "input": _input_record(plan, d),
        "package_version": __version__,
    }
    _write_outputs(plan, report)
    print(
        f"tau_hat={_fmt(rep.tau_hat)} tau_tilde={_fmt(rep.tau_tilde)} "
        f"ci=[{_fmt(rep.ci_lower)}, {_fmt(rep.ci_upper)}] level={_fmt(rep.level)} method={rep.method}"
    )
    return EXIT_OK


def _simulate(plan: RunPlan) -> int:
    spec = load_spec(plan.config).with_changes(threads=plan.threads)
    rep = run_coverage(spec)
    _write_outputs(plan, rep.to_dict(), {"replications.csv": rep.write_records_csv})
    parts = [f"{s.method}: coverage={_fmt(s.coverage)} length={_fmt(s.mean_ci_length)}" for s in rep.summaries.values()]
    print(f"dgp={spec.dgp} reps={spec.n_reps} " + "; ".join(parts))
    if rep.flagged:
        print("warning: more than 5% of replications failed for at least one method", file=sys.stderr)
    return EXIT_OK


def _diagnose(plan: RunPlan) -> int:
    d = _load(plan)
    cfg = plan.method
    m = build_match(d, cfg)
    diag = diagnostics(m, d)
    agg = aggregate_weights(m)
    report = {
        "matcher": cfg.matcher,
        "config": asdict(cfg),
        "input": _input_record(plan, d),
        "n_matched": m.n_matched,
        "n_unmatched": diag.n_unmatched,
        "ess": agg.ess,
        "mean_shared_controls": diag.mean_shared_controls,
        "mean_sharing_treated": diag.mean_sharing_treated,
        "mean_cluster_size": float(np.mean([len(c) for c in m.matched])) if m.matched else float("nan"),
        "max_reuse_count": int(agg.reuse_count.max()),
        "radius_quantiles": (
            dict(zip(("min", "median", "max"), np.quantile(diag.radii, [0, 0.5, 1]).tolist())) if len(diag.radii) else None
        ),
        "tail_grid": diag.tail_grid.tolist(),
        "scaled_radius_tail": diag.scaled_radius_tail.tolist(),
        "package_version": __version__,
    }
    if cfg.matcher == "sbw":
        sol = sbw_weights(d, cfg.delta, cfg.standardize)
        report["sbw"] = {"ess": ess(sol.weights), "max_imbalance": float(sol.imbalance.max()),
                         "kkt_residual": sol.kkt_residual}
    _write_outputs(plan, report)
    print(
        f"matched={m.n_matched} unmatched={diag.n_unmatched} ess={_fmt(agg.ess)} "
        f"shared_controls={_fmt(diag.mean_shared_controls)} sharing_treated={_fmt(diag.mean_sharing_treated)}"
    )
    return EXIT_OK


_COMMANDS = {"estimate": _estimate, "simulate": _simulate, "diagnose": _diagnose}


def execute(plan: RunPlan) -> int:
    """Run a parsed plan; failures are reported on stderr and mapped to exit 1."""
    try:
        return _COMMANDS[plan.command](plan)
    except (MatchVarError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        plan = parse_args(argv)
    except SystemExit as exc:  # argparse: --help/--version exit 0, usage errors exit 2
        return int(exc.code or 0)
    return execute(plan)


if __name__ == "__main__":
    sys.exit(main())
