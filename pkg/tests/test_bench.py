"""Benchmark harness: success criteria, profiles, statistics, artifacts."""

import numpy as np
import pytest

from deceptron import bench
from deceptron.bench import (BreakEvenInput, RunRecord, UndefinedStatisticError,
                             break_even, cohens_d, data_profile, perf_profile,
                             reliability_summary, spearman, success_checks)
from deceptron.dipg import IterRecord, SolveTrace


def make_trace(residuals, rmses=None, phis=None, armijo=None):
    tr = SolveTrace()
    n = len(residuals)
    rmses = rmses if rmses is not None else [np.nan] * n
    phis = phis if phis is not None else [0.5 * r * r for r in residuals]
    for t, (r, e, p) in enumerate(zip(residuals, rmses, phis)):
        rec = IterRecord(t=t, residual_norm=r, phi=p, rmse=e)
        if armijo is not None and t < len(armijo):
            rec.armijo_rhs = armijo[t]
        tr.records.append(rec)
    tr.final_x = np.zeros(1)
    return tr


# ---------------------------- success criteria ----------------------------

def test_success_monotone_trace():
    tr = make_trace([1.0, 0.6, 0.25])
    solved_tol, _, _, iters = success_checks(tr, rmse_threshold=0.1)
    assert solved_tol and iters == 2


def test_success_first_passage_dip():
    # dips to 0.28 then rises: min-over-trajectory convention says solved
    tr = make_trace([1.0, 0.28, 0.5])
    solved_tol, _, _, iters = success_checks(tr, rmse_threshold=0.1)
    assert solved_tol and iters == 1


def test_success_preconverged_start():
    tr = make_trace([0.0])
    solved_tol, _, _, iters = success_checks(tr, rmse_threshold=0.1)
    assert solved_tol and iters == 0


def test_success_rmse_boundary_tie():
    tr = make_trace([1.0, 0.2], rmses=[0.5, 0.1])
    _, solved_rmse, _, _ = success_checks(tr, rmse_threshold=0.1)
    assert solved_rmse


def test_basin_uses_trajectory_minimum():
    tr = make_trace([1.0, 0.9, 0.8], rmses=[0.5, 0.09, 0.4])
    _, solved_rmse, basin, _ = success_checks(tr, rmse_threshold=0.1,
                                              basin_threshold=0.095)
    assert basin and not solved_rmse


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        success_checks(SolveTrace(), rmse_threshold=0.1)


def test_audit_sufficient_decrease():
    ok = make_trace([1.0, 0.5, 0.2], armijo=[0.49, 0.03])
    assert bench.audit_sufficient_decrease(ok) == 0
    # phi after the step exceeds the logged bound -> violation
    bad = make_trace([1.0, 0.9], armijo=[0.3])
    assert bench.audit_sufficient_decrease(bad) == 1


# ------------------------------- break-even -------------------------------

def test_break_even_formula():
    assert abs(break_even(BreakEvenInput(100.0, 2.0, 1.0)) - 100.0) <= 1e-12
    with pytest.raises(ValueError):
        break_even(BreakEvenInput(100.0, 1.0, 2.0))


PUBLISHED_BREAKEVEN_ROWS = [
    # (t_train, c_dipg, c_base, n_break)
    (1238.28, 0.03395, 1.01181, 1266.33),
    (1238.28, 0.03395, 0.80940, 1596.86),
    (1596.15, 0.13526, 3.05891, 545.95),
    (1596.15, 0.13526, 3.03719, 550.03),
    (1596.15, 0.13526, 1.07835, 1692.47),
    (1592.89, 0.14720, 2.86459, 586.19),
    (1592.89, 0.14720, 11.62872, 138.74),
    (1592.89, 0.14720, 0.41055, 6048.76),
]


def test_break_even_published_rows():
    # The published cost columns are rounded to 5 decimals, so the exact
    # quotient can deviate from the published N_break by up to the
    # propagated half-ulp bound N^2/T * 1e-5 (dominant for the largest N).
    # Six of eight rows also land inside the nominal +/-0.01.
    nominal_hits = 0
    for t_train, c_dipg, c_base, expected in PUBLISHED_BREAKEVEN_ROWS:
        got = break_even(BreakEvenInput(t_train, c_base, c_dipg))
        rounding = expected ** 2 / t_train * 1e-5
        assert abs(got - expected) <= 0.01 + rounding
        nominal_hits += abs(got - expected) <= 0.01
    assert nominal_hits == 6
    # pin the two documented rounding-limited rows so regressions surface
    row1 = break_even(BreakEvenInput(1238.28, 1.01181, 0.03395))
    row8 = break_even(BreakEvenInput(1592.89, 0.41055, 0.14720))
    assert abs(row1 - 1266.33) == pytest.approx(0.01376, abs=1e-4)
    assert abs(row8 - 6048.76) == pytest.approx(0.19345, abs=1e-4)


# -------------------------------- profiles --------------------------------

def rec(method, inst, solved=True, time=1.0, iters=1, rmse=0.05,
        problem="p"):
    return RunRecord(problem=problem, method=method, instance_seed=inst,
                     solved_tol=solved, solved_rmse=rmse <= 0.1,
                     basin=rmse < 0.095,
                     iters_to_tol=iters if solved else None,
                     wall_time_s=time, final_rmse=rmse,
                     final_residual_ratio=0.2 if solved else 0.9,
                     min_rmse=rmse)


def test_perf_profile_hand_example():
    # two methods, two instances, times [[1,2],[2,1]]: each is fastest once
    records = [rec("a", 0, time=1.0), rec("a", 1, time=2.0),
               rec("b", 0, time=2.0), rec("b", 1, time=1.0)]
    curves = perf_profile(records, "time", tau_grid=[1.0, 2.0])
    by = {c.method: c for c in curves}
    assert by["a"].fraction_solved == [0.5, 1.0]
    assert by["b"].fraction_solved == [0.5, 1.0]


def test_perf_profile_unsolved_stays_in_denominator():
    records = [rec("a", 0, time=1.0), rec("a", 1, solved=False),
               rec("b", 0, time=2.0), rec("b", 1, solved=False)]
    curves = perf_profile(records, "time", tau_grid=[1.0, 100.0])
    by = {c.method: c for c in curves}
    # instance 1 solved by nobody: curves plateau at 0.5
    assert by["a"].fraction_solved == [0.5, 0.5]
    assert by["b"].fraction_solved == [0.0, 0.5]


def test_perf_profile_method_solving_nothing_is_zero():
    records = [rec("a", 0), rec("a", 1),
               rec("b", 0, solved=False), rec("b", 1, solved=False)]
    curves = perf_profile(records, "time", tau_grid=[1.0, 10.0, 1e6])
    by = {c.method: c for c in curves}
    assert by["b"].fraction_solved == [0.0, 0.0, 0.0]


def test_perf_profile_single_method_self_referential():
    records = [rec("a", 0, time=0.5), rec("a", 1, time=3.0)]
    curves = perf_profile(records, "time", tau_grid=[1.0])
    assert curves[0].fraction_solved == [1.0]


def test_data_profile_hand_example():
    records = [rec("a", 0, time=0.05), rec("a", 1, time=0.2),
               rec("a", 2, solved=False)]
    curves = data_profile(records, [0.1, 0.3, np.inf])
    assert curves[0].fraction_solved == [pytest.approx(1 / 3),
                                         pytest.approx(2 / 3),
                                         pytest.approx(2 / 3)]


def test_profile_curves_monotone():
    rng = np.random.default_rng(0)
    records = []
    for m in ("a", "b", "c"):
        for i in range(15):
            records.append(rec(m, i, solved=bool(rng.integers(0, 2)),
                               time=float(rng.uniform(0.1, 5.0)),
                               iters=int(rng.integers(1, 20))))
    for metric in ("time", "iters"):
        for c in perf_profile(records, metric):
            fs = c.fraction_solved
            assert all(0.0 <= v <= 1.0 for v in fs)
            assert all(a <= b + 1e-15 for a, b in zip(fs, fs[1:]))
    for c in data_profile(records, np.linspace(0.01, 6, 20)):
        fs = c.fraction_solved
        assert all(0.0 <= v <= 1.0 for v in fs)
        assert all(a <= b + 1e-15 for a, b in zip(fs, fs[1:]))


# ------------------------------- statistics -------------------------------

def brute_cohens_d(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    na, nb = len(a), len(b)
    va = sum((x - a.mean()) ** 2 for x in a) / (na - 1)
    vb = sum((x - b.mean()) ** 2 for x in b) / (nb - 1)
    sp = np.sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2))
    return (a.mean() - b.mean()) / sp


def brute_spearman(xs, ys):
    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        i = 0
        sv = np.asarray(v, float)[order]
        while i < len(v):
            j = i
            while j + 1 < len(v) and sv[j + 1] == sv[i]:
                j += 1
            avg = (i + j) / 2 + 1
            for k in range(i, j + 1):
                r[order[k]] = avg
            i = j + 1
        return r
    rx, ry = ranks(xs), ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.sum(rx * ry) / np.sqrt(np.sum(rx ** 2) * np.sum(ry ** 2)))


def test_cohens_d_hand_example():
    d = cohens_d([1, 1, 2, 2], [0, 0, 1, 1])
    assert abs(d - 1.7320508) <= 1e-6


def test_cohens_d_identities():
    assert cohens_d([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    a, b = [1, 1, 2, 2], [0, 0, 1, 1]
    assert abs(cohens_d(a, b) + cohens_d(b, a)) <= 1e-15
    with pytest.raises(UndefinedStatisticError):
        cohens_d([1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        cohens_d([1.0], [1.0, 2.0])


def test_cohens_d_brute_force_cross_check():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a = rng.standard_normal(int(rng.integers(2, 12)))
        b = rng.standard_normal(int(rng.integers(2, 12)))
        assert abs(cohens_d(a, b) - brute_cohens_d(a, b)) <= 1e-12


def test_spearman_hand_examples():
    rho, n = spearman([1, 2, 3, 4], [1, 3, 2, 4])
    assert abs(rho - 0.8) <= 1e-12 and n == 4
    assert spearman([1, 2, 3], [4, 5, 6])[0] == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1])[0] == pytest.approx(-1.0)
    with pytest.raises(UndefinedStatisticError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])


def test_spearman_brute_force_cross_check_with_ties():
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(3, 15))
        xs = rng.integers(0, 5, size=n).astype(float)  # many ties
        ys = rng.integers(0, 5, size=n).astype(float)
        if np.all(xs == xs[0]) or np.all(ys == ys[0]):
            continue
        rho, _ = spearman(xs, ys)
        assert abs(rho - brute_spearman(xs, ys)) <= 1e-12


# --------------------------- reliability summary ---------------------------

def test_reliability_marginal_unweighted():
    records = ([rec("a", i, rmse=0.05, problem="p1") for i in range(4)]
               + [rec("a", i, rmse=0.05 if i < 2 else 0.5, problem="p2")
                  for i in range(4)])
    summary = reliability_summary(records)
    assert summary["cells"][("p1", "a")]["success_rate"] == 1.0
    assert summary["cells"][("p2", "a")]["success_rate"] == 0.5
    assert summary["marginal"]["a"] == pytest.approx(0.75)
    assert not summary["partial_coverage"]["a"]


def test_reliability_partial_coverage_flag():
    records = [rec("a", 0, problem="p1"), rec("a", 0, problem="p2"),
               rec("b", 0, problem="p1")]
    summary = reliability_summary(records)
    assert summary["partial_coverage"]["b"]
    assert not summary["partial_coverage"]["a"]


# --------------------------------- emission --------------------------------

def test_emit_bench_artifacts(tmp_path):
    records = [rec("a", i, time=0.1 * (i + 1)) for i in range(3)] + \
              [rec("b", i, time=0.2 * (i + 1)) for i in range(3)]
    bench.emit_bench_artifacts(tmp_path, records, manifest={"seed": 1},
                               train_time_s=50.0)
    for name in ("records.csv", "profiles_time.csv", "profiles_iters.csv",
                 "data_profile.csv", "reliability.csv", "breakeven.csv",
                 "run_manifest.json"):
        assert (tmp_path / name).exists(), name
    header = (tmp_path / "records.csv").read_text().splitlines()[0]
    assert header == ",".join(bench.RECORD_COLUMNS)
