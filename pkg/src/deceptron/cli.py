"""Command-line entry points: train, solve, bench, verify, make-dataset."""

from __future__ import annotations

import argparse
import csv
import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import baselines, bench, core, dipg, problems, theory, training


def _add_problem_args(p):
    p.add_argument("--problem", required=True,
                   choices=sorted(problems.PROBLEMS))
    p.add_argument("--seed", type=int, default=0)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="deceptron",
        description="Learned bidirectional surrogates and inverse solvers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="three-stage surrogate training")
    _add_problem_args(p)
    p.add_argument("--out", required=True, help="output model directory")
    p.add_argument("--n-train", type=int, default=768)
    p.add_argument("--n-val", type=int, default=128)
    p.add_argument("--n-test", type=int, default=128)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("solve", help="solve one instance")
    _add_problem_args(p)
    p.add_argument("--model", required=True, help="model JSON path")
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--method", default="dipg",
                   choices=["dipg", "gd", "gn", "lm", "lbfgs"])
    p.add_argument("--alpha0", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=0.4)
    p.add_argument("--c", type=float, default=1e-4)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--max-iters", type=int, default=80)
    p.add_argument("--backtracks", type=int, default=8)
    p.add_argument("--tol", type=float, default=0.30)
    p.add_argument("--x0", default="warm", choices=["warm", "zeros"])
    p.add_argument("--out", default=None,
                   help="output prefix for <prefix>_trace.csv / _summary.json")

    p = sub.add_parser("bench", help="matched benchmark suite")
    _add_problem_args(p)
    p.add_argument("--models", required=True,
                   help="model directory from `deceptron train`")
    p.add_argument("--methods", default="dipg+jcp,dipg-jcp,gd,gn,lm,lbfgs")
    p.add_argument("--instances", type=int, default=40)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=0.30)
    p.add_argument("--x0", default="zeros", choices=["warm", "zeros"])

    p = sub.add_parser("verify", help="randomized theory suites")
    p.add_argument("--suite", default="all",
                   choices=["first_order", "deviation", "collapse", "trace_probe", "full_residual", "all"])
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("make-dataset", help="generate and persist a dataset")
    _add_problem_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=768)
    p.add_argument("--n-val", type=int, default=128)
    p.add_argument("--n-test", type=int, default=128)
    return parser


TRACE_COLUMNS = ["t", "residual_norm", "phi", "rmse", "accepted_alpha",
                 "step_norm", "cosine_neg_grad", "rjcp", "backtracks_used",
                 "wall_time_s", "dir_deriv", "armijo_rhs"]


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for rec in trace.records:
            writer.writerow({k: getattr(rec, k) for k in TRACE_COLUMNS})


def cmd_train(args):
    problem = problems.make_problem(args.problem)
    cfg = training.default_train_config(args.problem, seed=args.seed)
    dataset = problems.make_dataset(problem, args.n_train, args.n_val,
                                    args.n_test, seed=args.seed)
    t0 = time.perf_counter()
    dec_plus, dec_minus, history = training.train_three_stage(
        dataset, cfg, verbose=args.verbose)
    train_time = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for dec, name in ((dec_plus, "model_plus.json"),
                      (dec_minus, "model_minus.json")):
        dec.meta.update({"problem": args.problem, "seed": args.seed})
        core.save_deceptron(dec, out / name)

    cols = sorted({k for row in history for k in row})
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in history:
            writer.writerow(row)

    rjcp_plus = training.validation_rjcp(dec_plus, dataset.val_xn, seed=args.seed)
    rjcp_minus = training.validation_rjcp(dec_minus, dataset.val_xn, seed=args.seed)
    meta = {"problem": args.problem, "seed": args.seed,
            "train_time_s": train_time,
            "val_rjcp_plus": rjcp_plus, "val_rjcp_minus": rjcp_minus,
            "counts": dataset.meta["counts"]}
    with open(out / "train_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    print(json.dumps(meta, indent=2))
    return 0


def cmd_solve(args):
    problem = problems.make_problem(args.problem)
    dec = core.load_deceptron(args.model)
    cfg = dipg.DipgConfig(alpha0=args.alpha0, c=args.c, beta=args.beta,
                          rho=args.rho, max_iters=args.max_iters,
                          backtrack_budget=args.backtracks,
                          stop_rel_tol=args.tol)
    method = "dipg" if args.method == "dipg" else args.method
    base_cfg = baselines.BaselineConfig(
        method=args.method, max_iters=args.max_iters, stop_rel_tol=args.tol,
        c=args.c, beta=args.beta)
    trace = bench.solve_instance(
        method, dec, dec, problem, args.instance_seed, x0_policy=args.x0,
        dipg_cfg=cfg, baseline_cfgs={args.method: base_cfg}, tol=args.tol)
    record = bench.record_from_trace(trace, args.problem, args.method,
                                     args.instance_seed,
                                     problem.rmse_success_threshold,
                                     args.tol, problem.basin_threshold)
    summary = asdict(record)
    if args.out:
        write_trace_csv(trace, f"{args.out}_trace.csv")
        with open(f"{args.out}_summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_bench(args):
    problem = problems.make_problem(args.problem)
    models = Path(args.models)
    dec_plus = core.load_deceptron(models / "model_plus.json")
    minus_path = models / "model_minus.json"
    dec_minus = core.load_deceptron(minus_path) if minus_path.exists() else None
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    records = bench.run_suite(problem, methods, args.instances, args.seed,
                              dec_plus, dec_minus, x0_policy=args.x0,
                              tol=args.tol)
    train_time = None
    meta_path = models / "train_meta.json"
    if meta_path.exists():
        with open(meta_path) as fh:
            train_time = json.load(fh).get("train_time_s")
    manifest = {
        "problem": args.problem, "methods": methods,
        "instances": args.instances, "seed": args.seed, "tol": args.tol,
        "x0_policy": args.x0,
        "model_hash_plus": bench.model_hash(models / "model_plus.json"),
        "model_hash_minus": (bench.model_hash(minus_path)
                             if minus_path.exists() else None),
        "dipg_config": asdict(dipg.DipgConfig()),
        "baseline_config": asdict(baselines.BaselineConfig()),
        "problem_config": {k: v for k, v in problem.config.items()
                           if not isinstance(v, np.ndarray)},
        "rmse_success_threshold": problem.rmse_success_threshold,
        "train_time_s": train_time,
    }
    bench.emit_bench_artifacts(args.out, records, manifest=manifest,
                               train_time_s=train_time)
    summary = bench.reliability_summary(records)
    print(json.dumps({"marginal_success": summary["marginal"],
                      "out": str(args.out)}, indent=2))
    return 0


def cmd_verify(args):
    if args.suite == "all":
        report = theory.run_all(args.trials, args.seed)
    else:
        report = [theory.run_suite(args.suite, args.trials, args.seed)]
    payload = {"reports": report,
               "passed": all(r["failures"] == 0 for r in report)}
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0 if payload["passed"] else 1


def cmd_make_dataset(args):
    problem = problems.make_problem(args.problem)
    ds = problems.make_dataset(problem, args.n_train, args.n_val,
                               args.n_test, seed=args.seed)
    problems.save_dataset(ds, args.out)
    print(f"wrote dataset to {args.out}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "solve": cmd_solve,
        "bench": cmd_bench,
        "verify": cmd_verify,
        "make-dataset": cmd_make_dataset,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
