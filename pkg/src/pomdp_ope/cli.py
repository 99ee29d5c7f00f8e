"""Command-line front end.

Exit codes: 0 success, 1 a check failed, 2 usage or input/output error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import core
from .coverage import coverage_report
from .errors import BudgetError, DatasetError, PomdpError
from .estimators import METHODS, build_classes, mom_blocks_default, run_estimator
from .exact import DEFAULT_BUDGET, brute_force_J, build_algebra
from .fdvf import CONSTRUCTIONS, construct_fdvf, construct_history_weights
from .fixtures import KINDS, default_fixture_set, fixture_from_name, generate_fixture
from .simulate import read_dataset, sample_dataset, write_dataset
from .study import (
    StudyConfig,
    dumps_canonical,
    emit_report,
    rows_to_csv,
    run_convergence_study,
    write_canonical_json,
)
from .suite import CheckRow, run_verification_suite, suite_passed, summarize
from .validation import validate_model

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _out(args, name) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _load_problem(args, need_pie=True):
    """Model and policies from --fixture or from --model/--pib/--pie files."""
    if getattr(args, "fixture", None):
        fx = fixture_from_name(args.fixture)
        return fx.model, fx.pi_e, fx.pi_b
    if not args.model:
        raise UsageError("give --fixture NAME or --model FILE")
    model = core.load_model(args.model)
    pi_b = core.load_policy(args.pib) if getattr(args, "pib", None) else None
    pi_e = core.load_policy(args.pie) if getattr(args, "pie", None) else None
    if need_pie and (pi_e is None or pi_b is None):
        raise UsageError("this command needs --pie and --pib")
    return model, pi_e, pi_b


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg})") from None


def _emit(args, name, data):
    path = _out(args, name)
    write_canonical_json(data, path)
    print(f"wrote {path}")


# --------------------------------------------------------------------------
# subcommands

def cmd_validate(args):
    model, pi_e, pi_b = _load_problem(args, need_pie=False)
    report = validate_model(model, pi_b, pi_e, budget=args.budget)
    _emit(args, "validate.json", report.to_dict())
    for c in report.failures():
        print(f"FAIL {c.name} step={c.step} {c.detail}")
    return EXIT_OK if report.ok else EXIT_CHECK


def cmd_exact(args):
    model, pi_e, pi_b = _load_problem(args)
    alg = build_algebra(model, pi_e, pi_b, budget=args.budget)
    data = {"J_e": alg.J_e, "J_b": alg.J_b,
            "latent_value_e": alg.value_e[:-1].tolist(),
            "latent_value_b": alg.value_b[:-1].tolist(),
            "occupancy_e": alg.occupancy_e.tolist(), "occupancy_b": alg.occupancy_b.tolist()}
    status = EXIT_OK
    try:
        bf = brute_force_J(model, pi_e)
        data["brute_force_J_e"] = bf
        if abs(bf - alg.J_e) > args.tol:
            status = EXIT_CHECK
    except BudgetError as exc:
        data["brute_force_J_e"] = None
        data["brute_force_note"] = str(exc)
    _emit(args, "exact.json", data)
    if args.dump:
        steps = []
        for st in alg.steps:
            steps.append({"step": st.step, "belief_matrix": st.beliefs.tolist(),
                          "history_marginal": st.history_marginal.tolist(),
                          "outcome_matrix": st.outcome.tolist(), "Z": st.Z.tolist(),
                          "future_marginal": st.future_marginal.tolist(),
                          "mean_belief": st.mean_belief.tolist()})
        Path(args.dump).write_text(dumps_canonical({"steps": steps}) + "\n")
        print(f"wrote {args.dump}")
    return status


def cmd_coverage(args):
    model, pi_e, pi_b = _load_problem(args)
    rep = coverage_report(build_algebra(model, pi_e, pi_b, budget=args.budget))
    path = _out(args, "coverage.csv")
    path.write_text(rows_to_csv(rep.rows(), rep.COLUMNS))
    print(f"wrote {path}")
    summary = rep.summary()
    summary["bound_note"] = "coefficients are exact; bounds elsewhere are up to an absolute constant"
    _emit(args, "coverage.json", summary)
    return EXIT_OK


def cmd_construct(args):
    model, pi_e, pi_b = _load_problem(args)
    alg = build_algebra(model, pi_e, pi_b, budget=args.budget)
    names = CONSTRUCTIONS if args.construction == "all" else (args.construction,)
    out, status = [], EXIT_OK
    for name in names:
        sol = construct_fdvf(alg, name)
        out.append(sol.summary())
        if sol.max_residual > args.tol:
            status = EXIT_CHECK
    w = construct_history_weights(alg)
    data = {"fdvf": out, "history_weights": {
        "sup_norm": w.sup_norms.tolist(), "second_moment": w.l2_sq_norms.tolist(),
        "mean_matching_residual": w.residuals.tolist()}}
    _emit(args, "construct.json", data)
    return status


def cmd_simulate(args):
    model = core.load_model(args.model) if args.model else None
    if args.fixture:
        fx = fixture_from_name(args.fixture)
        model, pi_b = fx.model, fx.pi_b
    elif model is None or not args.policy:
        raise UsageError("simulate needs --fixture or --model and --policy")
    else:
        pi_b = core.load_policy(args.policy)
    ds = sample_dataset(model, pi_b, args.n, args.seed)
    out = Path(args.out) if args.out else _out(args, "dataset.jsonl")
    write_dataset(ds, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_estimate(args):
    model, pi_e, pi_b = _load_problem(args)
    ds = read_dataset(args.dataset, model)
    classes = None
    if args.method in ("minimax", "mis", "plugin"):
        alg = build_algebra(model, pi_e, pi_b, budget=args.budget)
        classes = build_classes(alg, m=args.class_size, eps=args.class_eps, seed=args.seed)
    blocks = args.mom_blocks
    if blocks == 0:
        blocks = mom_blocks_default(ds.n)
    rep = run_estimator(args.method, ds.observed(), pi_e, classes, blocks, ds.seed)
    out = Path(args.out) if args.out else _out(args, "estimate.json")
    write_canonical_json(rep.to_dict(), out)
    print(f"{args.method}: {rep.estimate:.10g}")
    return EXIT_OK


def _verify_fixtures(cfg, seed):
    names = cfg.get("fixtures")
    if names is None:
        return default_fixture_set(cfg.get("random_count", 3), seed)
    return [fixture_from_name(n) for n in names]


def cmd_verify(args):
    cfg = _load_config(args.config)
    extra = set(cfg) - {"fixtures", "random_count", "theta_offset", "workers", "checks"}
    if extra:
        raise UsageError(f"unknown verify config keys: {sorted(extra)}")
    fixtures = _verify_fixtures(cfg, args.seed)
    workers = args.workers or cfg.get("workers", 1)
    rows = run_verification_suite(fixtures, cfg.get("checks"), cfg.get("theta_offset", 0.0), workers)
    path = _out(args, "verify.csv")
    path.write_text(rows_to_csv([dict(zip(CheckRow.COLUMNS, r.as_tuple())) for r in rows],
                                CheckRow.COLUMNS))
    print(f"wrote {path}")
    _emit(args, "verify.json", summarize(rows))
    for r in rows:
        if r.status == "fail":
            print(f"FAIL {r.check} fixture={r.fixture} step={r.step} value={r.value:.3e} "
                  f"tol={r.tol:.1e} {r.detail}")
    return EXIT_OK if suite_passed(rows) else EXIT_CHECK


def cmd_study(args):
    cfg = _load_config(args.config)
    cfg.setdefault("base_seed", args.seed)
    if args.workers:
        cfg["workers"] = args.workers
    try:
        config = StudyConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    result = run_convergence_study(config)
    for fmt in ("csv", "json"):
        path = _out(args, f"study.{fmt}")
        emit_report(result, path, fmt)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_fixture(args):
    fx = generate_fixture(args.kind, _load_config(args.params) if args.params else None, args.seed)
    core.save_model(fx.model, _out(args, f"{fx.name}.model.json"))
    core.save_policy(fx.pi_e, _out(args, f"{fx.name}.pie.json"))
    core.save_policy(fx.pi_b, _out(args, f"{fx.name}.pib.json"))
    print(f"wrote {fx.name}.{{model,pie,pib}}.json to {args.out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def flags(suppress):
        # subcommands accept the global flags too, without resetting them
        p = argparse.ArgumentParser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--seed", type=int, default=d(0), help="root seed (default 0)")
        p.add_argument("--budget", type=int, default=d(DEFAULT_BUDGET),
                       help="largest (OA)^H the exact engine may enumerate")
        p.add_argument("--tol", type=float, default=d(1e-8), help="residual tolerance for pass/fail")
        p.add_argument("--out-dir", default=d("."), help="directory for output files")
        return p

    common = flags(True)
    parser = argparse.ArgumentParser(prog="pomdp-ope", parents=[flags(False)],
                                     description="Exact and Monte-Carlo off-policy evaluation for tabular POMDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def problem(p, policies=True):
        p.add_argument("--fixture", help="named fixture, e.g. bandit, chain, random-3")
        p.add_argument("--model", help="model JSON file")
        if policies:
            p.add_argument("--pie", help="evaluation policy JSON file")
            p.add_argument("--pib", help="behavior policy JSON file")

    p = sub.add_parser("validate", parents=[common], help="structural and rank checks")
    problem(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("exact", parents=[common], help="policy values and occupancies")
    problem(p)
    p.add_argument("--dump", help="also write every step's belief/outcome matrices here")
    p.set_defaults(fn=cmd_exact)

    p = sub.add_parser("coverage", parents=[common], help="coverage coefficients per step")
    problem(p)
    p.set_defaults(fn=cmd_coverage)

    p = sub.add_parser("construct", parents=[common], help="FDVF constructions and history weights")
    problem(p)
    p.add_argument("--construction", choices=CONSTRUCTIONS + ("all",), default="all")
    p.set_defaults(fn=cmd_construct)

    p = sub.add_parser("simulate", parents=[common], help="sample behavior-policy trajectories")
    p.add_argument("--fixture")
    p.add_argument("--model")
    p.add_argument("--policy", help="behavior policy JSON file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", help="JSONL output path (default OUT_DIR/dataset.jsonl)")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="estimate J(pi_e) from a dataset")
    problem(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--mom-blocks", type=int, default=None,
                   help="median-of-means blocks for mis; 0 picks the default count")
    p.add_argument("--class-size", type=int, default=4, help="perturbed members per class")
    p.add_argument("--class-eps", type=float, default=2.0, help="perturbation magnitude")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("verify", parents=[common], help="run the verification suite")
    p.add_argument("--config", help="JSON: fixtures, random_count, checks, theta_offset, workers")
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("study", parents=[common], help="seeded convergence study")
    p.add_argument("--config", help="JSON study configuration")
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(fn=cmd_study)

    p = sub.add_parser("fixture", parents=[common], help="write a generated fixture to JSON files")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--params", help="JSON file of generator parameters")
    p.set_defaults(fn=cmd_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DatasetError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PomdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
