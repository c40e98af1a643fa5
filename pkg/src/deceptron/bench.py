"""Benchmark harness: matched instance sets across solvers, success
criteria, performance/data profiles, effect sizes, reliability summaries,
and training-cost break-even points. Emits CSV/JSON artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import baselines, dipg, nets, problems


class UndefinedStatisticError(ValueError):
    """The requested statistic is not defined for these inputs."""


@dataclass
class RunRecord:
    problem: str
    method: str
    instance_seed: int
    solved_tol: bool
    solved_rmse: bool
    basin: bool
    iters_to_tol: int | None
    wall_time_s: float
    final_rmse: float
    final_residual_ratio: float
    min_rmse: float
    mean_rjcp_final: float | None = None
    mean_cosine: float | None = None
    terminated_by: str = ""


@dataclass
class ProfileCurve:
    method: str
    grid: list
    fraction_solved: list


@dataclass
class BreakEvenInput:
    t_train: float
    c_base: float
    c_dipg: float


def break_even(inp):
    """Solve count at which one-time training cost is amortized."""
    if not inp.c_base > inp.c_dipg:
        raise ValueError("break-even requires c_base > c_dipg")
    return inp.t_train / (inp.c_base - inp.c_dipg)


# ---------------------------------------------------------------------------
# success criteria
# ---------------------------------------------------------------------------

def success_checks(trace, rmse_threshold, tol=0.30, basin_threshold=0.095):
    """Evaluate a trace against the three success notions.

    solved_tol is first-passage: the minimum over the trajectory of
    ||r_t|| / ||r_0|| must reach tol. solved_rmse uses the final iterate;
    basin uses the trajectory minimum RMSE.
    Returns (solved_tol, solved_rmse, basin, iters_to_tol).
    """
    if not trace.records:
        raise ValueError("empty trace")
    ratios = trace.residual_ratios()
    solved_tol = bool(np.min(ratios) <= tol)
    iters_to_tol = int(np.argmax(ratios <= tol)) if solved_tol else None
    rmses = np.array([rec.rmse for rec in trace.records])
    have_rmse = np.isfinite(rmses).any()
    final_rmse = trace.records[-1].rmse
    solved_rmse = bool(have_rmse and final_rmse <= rmse_threshold)
    basin = bool(have_rmse and np.nanmin(rmses) < basin_threshold)
    return solved_tol, solved_rmse, basin, iters_to_tol


def record_from_trace(trace, problem, method, instance_seed, rmse_threshold,
                      tol=0.30, basin_threshold=0.095):
    solved_tol, solved_rmse, basin, iters = success_checks(
        trace, rmse_threshold, tol, basin_threshold)
    ratios = trace.residual_ratios()
    rjcps = [rec.rjcp for rec in trace.records if np.isfinite(rec.rjcp)]
    cosines = [rec.cosine_neg_grad for rec in trace.records
               if np.isfinite(rec.cosine_neg_grad)]
    rmses = np.array([rec.rmse for rec in trace.records])
    return RunRecord(
        problem=problem, method=method, instance_seed=instance_seed,
        solved_tol=solved_tol, solved_rmse=solved_rmse, basin=basin,
        iters_to_tol=iters,
        wall_time_s=trace.total_time_s,
        final_rmse=float(trace.records[-1].rmse),
        final_residual_ratio=float(ratios[-1]),
        min_rmse=float(np.nanmin(rmses)) if np.isfinite(rmses).any() else np.nan,
        mean_rjcp_final=float(rjcps[-1]) if rjcps else None,
        mean_cosine=float(np.mean(cosines)) if cosines else None,
        terminated_by=trace.terminated_by,
    )


# ---------------------------------------------------------------------------
# suite execution
# ---------------------------------------------------------------------------

def normalized_box(dec, box):
    if box is None:
        return None
    lo, hi = box
    return (dec.normalize_x(lo), dec.normalize_x(hi))


def solve_instance(method, dec_plus, dec_minus, problem, instance_seed,
                   x0_policy="zeros", dipg_cfg=None, baseline_cfgs=None,
                   tol=0.30):
    """Solve one instance with one method; every method sees the same data.

    D-IPG variants use their own reverse maps; classical baselines run on
    the shared forward surrogate (the +JCP model's f).
    """
    x_true, y_obs = problems.generate_instance(problem, instance_seed)
    dec = dec_minus if method == "dipg-jcp" else dec_plus
    y_n = dec.normalize_y(y_obs)
    box_n = normalized_box(dec, problem.box)

    if x0_policy == "warm":
        x0 = nets.evaluate(dec.g, y_n)
        if box_n is not None:
            x0 = np.clip(x0, box_n[0], box_n[1])
    elif x0_policy == "zeros":
        x0 = np.zeros(dec.d_in)
    else:
        raise ValueError(f"unknown x0 policy {x0_policy!r}")

    if method in ("dipg+jcp", "dipg-jcp", "dipg"):
        cfg = dipg_cfg or dipg.DipgConfig()
        cfg = _with_box(cfg, box_n, tol)
        trace = dipg.solve(dec, y_n, x0, cfg, ground_truth=x_true,
                           run_seed=instance_seed)
    else:
        cfgs = baseline_cfgs or {}
        cfg = cfgs.get(method) or baselines.BaselineConfig(method=method)
        cfg = _with_box(cfg, box_n, tol)
        trace = baselines.baseline_solve(dec, y_n, x0, cfg,
                                         ground_truth=x_true)
    return trace


def _with_box(cfg, box_n, tol):
    from dataclasses import replace
    return replace(cfg, box=box_n, stop_rel_tol=tol)


def run_suite(problem, methods, n_instances, base_seed, dec_plus,
              dec_minus=None, x0_policy="zeros", dipg_cfg=None,
              baseline_cfgs=None, tol=0.30):
    """Run matched instance sets: instance i uses seed base_seed + i for every
    method. Returns a list of RunRecords."""
    if any(m == "dipg-jcp" for m in methods) and dec_minus is None:
        raise ValueError("dipg-jcp requested but no penalty-free model given")
    records = []
    for method in methods:
        for i in range(n_instances):
            seed = base_seed + i
            trace = solve_instance(method, dec_plus, dec_minus, problem, seed,
                                   x0_policy, dipg_cfg, baseline_cfgs, tol)
            records.append(record_from_trace(
                trace, problem.name, method, seed,
                problem.rmse_success_threshold, tol, problem.basin_threshold))
    return records


def audit_sufficient_decrease(trace):
    """Re-verify every accepted step against its logged acceptance inequality.

    For each record that logged an accepted step (finite armijo_rhs), the
    next record's objective value must satisfy phi_next <= armijo_rhs exactly
    as logged. Returns the number of violations.
    """
    violations = 0
    recs = trace.records
    for prev, nxt in zip(recs, recs[1:]):
        if np.isfinite(prev.armijo_rhs):
            if not nxt.phi <= prev.armijo_rhs:
                violations += 1
    return violations


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

def _metric_value(rec, metric):
    if metric == "time":
        return rec.wall_time_s
    if metric == "iters":
        return float(rec.iters_to_tol) if rec.iters_to_tol is not None else np.nan
    raise ValueError(f"unknown metric {metric!r}")


def perf_profile(records, metric="time", tau_grid=None):
    """Dolan-More profiles: fraction of instances within factor tau of the
    best solved metric. Instances solved by no method stay in the denominator.
    """
    methods = sorted({r.method for r in records})
    instances = sorted({r.instance_seed for r in records})
    if len(methods) < 2:
        # degenerate single-method profile: best is self-referential
        pass
    ratios = {m: [] for m in methods}
    for inst in instances:
        per = {r.method: r for r in records if r.instance_seed == inst}
        solved = {m: per[m] for m in per if per[m].solved_tol
                  and np.isfinite(_metric_value(per[m], metric))}
        best = min((_metric_value(r, metric) for r in solved.values()),
                   default=np.nan)
        for m in methods:
            if m in solved and best > 0:
                ratios[m].append(_metric_value(solved[m], metric) / best)
            elif m in solved and best == 0:
                ratios[m].append(1.0)
            else:
                ratios[m].append(np.inf)
    if tau_grid is None:
        finite = [x for rs in ratios.values() for x in rs if np.isfinite(x)]
        hi = max(finite) if finite else 1.0
        tau_grid = np.geomspace(1.0, max(hi, 2.0), 64)
    n = len(instances)
    curves = []
    for m in methods:
        rs = np.array(ratios[m])
        frac = [float(np.sum(rs <= t)) / n for t in tau_grid]
        curves.append(ProfileCurve(m, list(map(float, tau_grid)), frac))
    return curves


def data_profile(records, budgets):
    """Fraction of instances solved within each absolute wall-clock budget."""
    methods = sorted({r.method for r in records})
    instances = sorted({r.instance_seed for r in records})
    n = len(instances)
    curves = []
    for m in methods:
        times = [r.wall_time_s for r in records
                 if r.method == m and r.solved_tol]
        frac = [float(sum(t <= b for t in times)) / n for b in budgets]
        curves.append(ProfileCurve(m, list(map(float, budgets)), frac))
    return curves


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def cohens_d(group_a, group_b):
    """Pooled-variance effect size (sample variances, n-1)."""
    a = np.asarray(group_a, float)
    b = np.asarray(group_b, float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least 2 values")
    na, nb = len(a), len(b)
    s2 = (((na - 1) * np.var(a, ddof=1) + (nb - 1) * np.var(b, ddof=1))
          / (na + nb - 2))
    if s2 == 0:
        raise UndefinedStatisticError("zero pooled variance")
    return float((a.mean() - b.mean()) / np.sqrt(s2))


def spearman(xs, ys):
    """Rank correlation with average ranks on ties. Returns (rho, n)."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if len(xs) != len(ys) or len(xs) < 3:
        raise ValueError("need equal-length inputs with n >= 3")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise UndefinedStatisticError("constant input has no rank correlation")
    rx = rankdata(xs)
    ry = rankdata(ys)
    rho = float(np.corrcoef(rx, ry)[0, 1])
    return rho, len(xs)


def reliability_summary(records):
    """Per problem x method cell stats plus unweighted per-method marginals.

    Returns {"cells": {(problem, method): {...}}, "marginal": {method: rate}}.
    Methods missing a problem are excluded from that marginal with a flag.
    """
    cells = {}
    problems_seen = sorted({r.problem for r in records})
    methods = sorted({r.method for r in records})
    for p in problems_seen:
        for m in methods:
            rs = [r for r in records if r.problem == p and r.method == m]
            if not rs:
                continue
            rjcps = [r.mean_rjcp_final for r in rs if r.mean_rjcp_final is not None]
            cells[(p, m)] = {
                "success_rate": float(np.mean([r.solved_rmse for r in rs])),
                "mean_time_s": float(np.mean([r.wall_time_s for r in rs])),
                "mean_final_rjcp": float(np.mean(rjcps)) if rjcps else None,
                "n": len(rs),
            }
    marginal = {}
    flags = {}
    for m in methods:
        rates = [cells[(p, m)]["success_rate"] for p in problems_seen
                 if (p, m) in cells]
        covered = sum((p, m) in cells for p in problems_seen)
        marginal[m] = float(np.mean(rates)) if rates else None
        flags[m] = covered < len(problems_seen)
    return {"cells": cells, "marginal": marginal, "partial_coverage": flags}


# ---------------------------------------------------------------------------
# artifact emission
# ---------------------------------------------------------------------------

RECORD_COLUMNS = [
    "problem", "method", "instance_seed", "solved_tol", "solved_rmse",
    "basin", "iters_to_tol", "wall_time_s", "final_rmse",
    "final_residual_ratio", "min_rmse", "mean_rjcp_final", "mean_cosine",
    "terminated_by",
]

TIMING_COLUMNS = {"wall_time_s"}


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS)
        writer.writeheader()
        for r in records:
            row = asdict(r)
            writer.writerow({k: _fmt(row[k]) for k in RECORD_COLUMNS})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return v


def write_profile_csv(curves, path, grid_name="tau"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", grid_name, "fraction_solved"])
        for c in curves:
            for g, frac in zip(c.grid, c.fraction_solved):
                writer.writerow([c.method, repr(float(g)), repr(float(frac))])


def write_reliability_csv(summary, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem", "method", "success_rate", "mean_time_s",
                         "mean_final_rjcp", "n"])
        for (p, m), cell in sorted(summary["cells"].items()):
            writer.writerow([p, m, repr(cell["success_rate"]),
                             repr(cell["mean_time_s"]),
                             "" if cell["mean_final_rjcp"] is None
                             else repr(cell["mean_final_rjcp"]), cell["n"]])
        for m, rate in sorted(summary["marginal"].items()):
            writer.writerow(["__marginal__", m,
                             "" if rate is None else repr(rate), "", "",
                             "partial" if summary["partial_coverage"][m] else ""])


def model_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_breakeven_csv(records, train_time_s, path, dipg_method="dipg+jcp"):
    """Break-even counts of training cost against each slower baseline."""
    methods = sorted({r.method for r in records})
    mean_time = {m: float(np.mean([r.wall_time_s for r in records
                                   if r.method == m])) for m in methods}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["baseline", "t_train_s", "c_dipg_s", "c_base_s",
                         "n_break"])
        if dipg_method not in mean_time:
            return
        c_dipg = mean_time[dipg_method]
        for m in methods:
            if m == dipg_method or m.startswith("dipg"):
                continue
            c_base = mean_time[m]
            if c_base > c_dipg:
                n_break = break_even(BreakEvenInput(train_time_s, c_base, c_dipg))
                writer.writerow([m, repr(train_time_s), repr(c_dipg),
                                 repr(c_base), repr(n_break)])


def emit_bench_artifacts(outdir, records, budgets=None, manifest=None,
                         train_time_s=None):
    """Write records.csv, profile CSVs, reliability.csv and run_manifest.json."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, out / "records.csv")
    if len({r.method for r in records}) >= 2:
        write_profile_csv(perf_profile(records, "time"),
                          out / "profiles_time.csv")
        write_profile_csv(perf_profile(records, "iters"),
                          out / "profiles_iters.csv")
    if budgets is None:
        times = [r.wall_time_s for r in records] or [1.0]
        budgets = np.geomspace(max(min(times) / 4, 1e-5), max(times) * 2, 32)
    write_profile_csv(data_profile(records, budgets),
                      out / "data_profile.csv", grid_name="budget_s")
    write_reliability_csv(reliability_summary(records), out / "reliability.csv")
    if train_time_s is not None:
        write_breakeven_csv(records, train_time_s, out / "breakeven.csv")
    if manifest is not None:
        with open(out / "run_manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, default=str)
