"""Command-line interface.

Subcommands: ``scores``, ``estimate``, ``toc``, ``compare``, ``simulate``.
Results go to stdout (or ``--output``); diagnostics go to stderr. Exit codes:
0 success, 2 schema/flag errors, 3 positivity violations.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import RateError, SchemaError
from .inference import BootstrapConfig, half_sample_bootstrap, paired_bootstrap_difference, toc_band
from .model import EvalDataset, ScoreVector, rank_by_priority, read_columns, read_csv, validate_dataset, write_csv
from .nuisance import LearnerSpec
from .scores import (
    DEFAULT_FOLDS,
    E_MIN,
    S_MIN,
    Endpoint,
    NuisanceEvaluations,
    aipw_obs_scores,
    aipw_rct_scores,
    aipw_survival_scores,
    cross_fit,
    ipw_scores,
    survival_tables_from_long,
)
from .estimator import toc_curve
from .simulate import Kink, PowerCell, SetupA, SurvivalSecond, power_study
from .weights import WeightSpec, read_alpha_grid

log = logging.getLogger("ratemetrics")

_ENDPOINTS = {"risk": "absolute_risk", "rmst": "rmst"}


def canonical_json(obj: dict) -> str:
    """Sorted keys, floats with 17 significant digits; byte-stable across runs."""

    def render(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            s = format(float(v), ".17g")
            if not any(c in s for c in ".einn"):
                s += ".0"
            return s
        if isinstance(v, dict):
            return "{" + ", ".join(f"{json.dumps(k)}: {render(v[k])}" for k in sorted(v)) + "}"
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(render(x) for x in v) + "]"
        return json.dumps(v)

    return render(obj) + "\n"


def _emit(text: str, output: str | None):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- flags


def _add_input(p):
    p.add_argument("--input", required=True, help="input CSV")
    p.add_argument("--output", help="output file (default: stdout)")


def _add_scores(p):
    p.add_argument("--score", choices=["ipw", "aipw-rct", "aipw-obs", "aipw-survival", "supplied"])
    p.add_argument("--pi", type=float, help="known randomization probability")
    p.add_argument("--t0", type=float, help="survival endpoint horizon")
    p.add_argument("--endpoint", choices=sorted(_ENDPOINTS), default="rmst")
    p.add_argument("--folds", type=int, default=DEFAULT_FOLDS)
    p.add_argument("--learner", choices=["ridge", "knn", "oracle"], default="ridge")
    p.add_argument("--lam", type=float, default=1.0, help="ridge penalty")
    p.add_argument("--k-neighbors", type=int, default=10)
    p.add_argument("--scenario", choices=["kink", "setup_a", "survival_second"], help="scenario for --learner oracle")
    p.add_argument("--nuisance", help="CSV with m0,m1[,ehat] per input row")
    p.add_argument("--survival-tables", help="long CSV unit,s,q,sc,dlambda")
    p.add_argument("--e-min", type=float, default=E_MIN)
    p.add_argument("--s-min", type=float, default=S_MIN)


def _add_weight(p):
    p.add_argument("--weight", choices=["autoc", "qini", "toc", "custom"], default="autoc")
    p.add_argument("--u", type=float, help="top fraction for --weight toc")
    p.add_argument("--alpha-file", help="single-column CSV of alpha(j/n) for --weight custom")
    p.add_argument("--rescale", action="store_true", help="rescale weights to unit variance")


def _add_bootstrap(p):
    p.add_argument("--bootstrap", type=int, default=200, help="half-sample replicates")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratemetrics", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scores", help="compute doubly robust scores and append a gamma column")
    _add_input(p)
    _add_scores(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sidecar", help="provenance JSON path (default: <output>.meta.json)")

    p = sub.add_parser("estimate", help="RATE point estimate with bootstrap inference (JSON)")
    _add_input(p)
    p.add_argument("--priority", required=True)
    _add_scores(p)
    _add_weight(p)
    _add_bootstrap(p)

    p = sub.add_parser("toc", help="TOC curve CSV, optionally with pointwise bands")
    _add_input(p)
    p.add_argument("--priority", required=True)
    p.add_argument("--bands", action="store_true")
    _add_scores(p)
    _add_bootstrap(p)

    p = sub.add_parser("compare", help="paired RATE difference between two priority columns (JSON)")
    _add_input(p)
    p.add_argument("--priority", action="append", required=True, help="give exactly twice: rule a, then rule b")
    _add_scores(p)
    _add_weight(p)
    _add_bootstrap(p)

    p = sub.add_parser("simulate", help="Monte Carlo power study (CSV)")
    p.add_argument("--scenario", choices=["kink", "setup_a", "survival_second"], required=True)
    p.add_argument("--p", type=float, action="append", help="kink: fraction with non-zero CATE (repeatable)")
    p.add_argument("--sigma-tau", type=float, action="append", help="setup_a: effect SD (repeatable)")
    p.add_argument("--sigma-eps", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.2, help="kink noise level")
    p.add_argument("--noise-is-sd", action="store_true", help="read --noise as an SD instead of a variance")
    p.add_argument("--t0", type=float, default=1.0)
    p.add_argument("--endpoint", choices=sorted(_ENDPOINTS), default="rmst")
    p.add_argument("--n", type=int, action="append", help="sample size (repeatable)")
    p.add_argument("--rule", help="priority rule (default: rule for kink, plugin for setup_a, oracle for survival)")
    p.add_argument("--k-neighbors", type=int, default=30)
    p.add_argument("--weight", choices=["autoc", "qini"], action="append")
    p.add_argument("--reps", type=int, default=1000)
    _add_bootstrap(p)
    p.add_argument("--output")
    return parser


# ---------------------------------------------------------------- pipeline


def _weight_spec(args, n: int) -> WeightSpec:
    if args.weight == "autoc":
        return WeightSpec.autoc(args.rescale)
    if args.weight == "qini":
        return WeightSpec.qini(args.rescale)
    if args.weight == "toc":
        if args.u is None:
            raise SchemaError("--weight toc requires --u")
        return WeightSpec.high_vs_others(args.u)
    if not args.alpha_file:
        raise SchemaError("--weight custom requires --alpha-file")
    grid = read_alpha_grid(args.alpha_file)
    if grid.shape[0] != n:
        raise SchemaError(f"alpha grid has {grid.shape[0]} values, dataset has n={n}")
    return WeightSpec.custom(grid, args.rescale)


def _scenario(args):
    if args.scenario is None:
        raise SchemaError("--learner oracle requires --scenario")
    if args.scenario == "survival_second":
        t0 = args.t0 if args.t0 is not None else 1.0
        return SurvivalSecond(t0=t0, endpoint=_ENDPOINTS[args.endpoint])
    return {"kink": Kink, "setup_a": SetupA}[args.scenario]()


def _read_nuisance(args, d: EvalDataset) -> NuisanceEvaluations | None:
    nuis = None
    if args.nuisance:
        cols = read_columns(args.nuisance)
        if "m0" not in cols or "m1" not in cols:
            raise SchemaError("nuisance CSV needs columns m0,m1[,ehat]")
        if len(cols["m0"]) != d.n:
            raise SchemaError(f"nuisance CSV has {len(cols['m0'])} rows, dataset has {d.n}")
        nuis = NuisanceEvaluations(
            m0=np.array(cols["m0"]), m1=np.array(cols["m1"]),
            e=np.array(cols["ehat"]) if "ehat" in cols else None, meta={"nuisance": "file"},
        )
    if args.survival_tables:
        cols = read_columns(args.survival_tables)
        missing = {"unit", "s", "q", "sc", "dlambda"} - set(cols)
        if missing:
            raise SchemaError(f"survival tables CSV missing columns: {', '.join(sorted(missing))}")
        tabs = survival_tables_from_long(d.n, cols["unit"], cols["s"], cols["q"], cols["sc"], cols["dlambda"])
        nuis = tabs if nuis is None else dataclasses.replace(
            nuis, grid=tabs.grid, q=tabs.q, sc=tabs.sc, dlambda=tabs.dlambda
        )
    return nuis


def _learner(args) -> LearnerSpec:
    if args.learner == "oracle":
        return LearnerSpec("oracle", scenario=_scenario(args))
    return LearnerSpec(args.learner, lam=args.lam, k_neighbors=args.k_neighbors)


def _outcome_nuisance(args, d, seed, need_e):
    """m (and e) from file, oracle, or cross-fitting, in that order of preference."""
    nuis = _read_nuisance(args, d)
    learner = _learner(args)
    if nuis is not None and nuis.has_outcome_model:
        folds = None
    elif learner.kind == "oracle":
        nuis = learner.scenario.oracle_nuisances(d)
        folds = None
    else:
        fitted, folds = cross_fit(d, args.folds, learner, seed, fit_propensity=need_e and d.propensity is None)
        nuis = fitted if nuis is None else dataclasses.replace(nuis, m0=fitted.m0, m1=fitted.m1, meta=fitted.meta)
    if need_e and d.propensity is not None:
        nuis = dataclasses.replace(nuis, e=np.asarray(d.propensity))
    return nuis, folds


def compute_scores(args, d: EvalDataset, seed: int) -> ScoreVector:
    family = args.score
    if family is None:
        if d.gamma is None:
            raise SchemaError("input has no gamma column; choose a score family with --score")
        family = "supplied"
    if d.has_survival and family not in ("supplied", "aipw-survival"):
        raise SchemaError("censored input: use --score aipw-survival with --t0")
    if family == "supplied":
        if d.gamma is None:
            raise SchemaError("--score supplied needs a gamma column")
        return ScoreVector(d.gamma, family="supplied")
    if family == "ipw":
        if args.pi is None:
            raise SchemaError("--score ipw requires --pi")
        return ipw_scores(d, args.pi)
    if family == "aipw-rct":
        if args.pi is None:
            raise SchemaError("--score aipw-rct requires --pi")
        nuis, folds = _outcome_nuisance(args, d, seed, need_e=False)
        sv = aipw_rct_scores(d, args.pi, nuis)
    elif family == "aipw-obs":
        nuis, folds = _outcome_nuisance(args, d, seed, need_e=True)
        sv = aipw_obs_scores(d, nuis, e_min=args.e_min)
    else:
        if not d.has_survival:
            raise SchemaError("--score aipw-survival needs event_time/event_observed columns")
        if args.t0 is None:
            raise SchemaError("endpoint horizon required: pass --t0")
        endpoint = Endpoint(_ENDPOINTS[args.endpoint], args.t0)
        learner = _learner(args)
        nuis = _read_nuisance(args, d)
        if learner.kind == "oracle":
            nuis = learner.scenario.oracle_nuisances(d)
        elif nuis is None or nuis.grid is None or not nuis.has_outcome_model or nuis.e is None:
            raise SchemaError(
                "aipw-survival needs --nuisance (m0,m1,ehat) and --survival-tables, or --learner oracle --scenario"
            )
        folds = None
        sv = aipw_survival_scores(d, endpoint, nuis, e_min=args.e_min, s_min=args.s_min)
    if folds is not None:
        sv = dataclasses.replace(sv, fold_assignment=folds.fold_of)
    return sv


def _bootstrap_cfg(args) -> BootstrapConfig:
    return BootstrapConfig(replicates=args.bootstrap, seed=args.seed, level=args.level, threads=args.threads)


def cmd_scores(args) -> int:
    d = read_csv(args.input)
    sv = compute_scores(args, d, args.seed)
    out = d.with_columns(gamma=sv.values)
    _emit(write_csv(out), args.output)
    meta = {
        "family": sv.family,
        "n": d.n,
        "seed": args.seed,
        "folds": int(sv.meta.get("folds", 0)) if sv.fold_assignment is not None else None,
        "clipped": int(sv.meta.get("clipped", 0)),
        "e_min": args.e_min,
        "learner": sv.meta.get("learner") or sv.meta.get("nuisance"),
        "endpoint": None if sv.endpoint is None else {"kind": sv.endpoint[0], "t0": sv.endpoint[1]},
    }
    sidecar = args.sidecar or (args.output + ".meta.json" if args.output else None)
    if sidecar:
        Path(sidecar).write_text(canonical_json(meta), encoding="utf-8")
    if meta["clipped"]:
        log.warning("clipped %d propensities to [%g, %g]", meta["clipped"], args.e_min, 1 - args.e_min)
    return 0


def cmd_estimate(args) -> int:
    d = read_csv(args.input)
    ranking = rank_by_priority(d, args.priority)
    sv = compute_scores(args, d, args.seed)
    est = half_sample_bootstrap(sv, ranking, _weight_spec(args, d.n), _bootstrap_cfg(args))
    _emit(canonical_json(est.to_dict()), args.output)
    return 0


def cmd_toc(args) -> int:
    d = read_csv(args.input)
    ranking = rank_by_priority(d, args.priority)
    sv = compute_scores(args, d, args.seed)
    curve = toc_band(sv, ranking, _bootstrap_cfg(args)) if args.bands else toc_curve(sv, ranking)
    _emit(curve.to_csv(), args.output)
    return 0


def cmd_compare(args) -> int:
    if len(args.priority) != 2:
        raise SchemaError("compare needs exactly two --priority columns")
    d = read_csv(args.input)
    ra, rb = (rank_by_priority(d, name) for name in args.priority)
    sv = compute_scores(args, d, args.seed)
    est = paired_bootstrap_difference(sv, ra, rb, _weight_spec(args, d.n), _bootstrap_cfg(args))
    _emit(canonical_json(est.to_dict()), args.output)
    return 0


def cmd_simulate(args) -> int:
    ns = args.n or [400 if args.scenario == "kink" else 1000]
    if args.scenario == "kink":
        scenarios = [Kink(p=p, noise=args.noise, noise_is_variance=not args.noise_is_sd) for p in (args.p or [1.0, 0.5, 0.1])]
        rule = args.rule or "rule"
    elif args.scenario == "setup_a":
        scenarios = [SetupA(sigma_tau=s, sigma_eps=args.sigma_eps) for s in (args.sigma_tau or [0.0, 0.1, 0.2, 0.3, 0.4])]
        rule = args.rule or "plugin"
    else:
        scenarios = [SurvivalSecond(t0=args.t0, endpoint=_ENDPOINTS[args.endpoint])]
        rule = args.rule or "oracle"
    learner = LearnerSpec("knn", k_neighbors=args.k_neighbors)
    cells = [PowerCell(s, n, rule, learner) for s in scenarios for n in ns]
    weights = args.weight or ["autoc", "qini"]
    # Qini weights rescaled to unit variance so both arms are on the AUTOC scale
    specs = [WeightSpec.autoc() if w == "autoc" else WeightSpec.qini(rescale=True) for w in weights]
    report = power_study(cells, specs, reps=args.reps, B=args.bootstrap, seed=args.seed, threads=args.threads)
    _emit(report.to_csv(), args.output)
    return 0


COMMANDS = {
    "scores": cmd_scores,
    "estimate": cmd_estimate,
    "toc": cmd_toc,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except RateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
