"""Numeric verification suites for the local Gauss-Newton equivalence
results."""

import numpy as np
import pytest

from deceptron import nets, theory
from deceptron.core import Deceptron, seeded_rng


def test_spectral_norm_matches_svd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M = rng.standard_normal((int(rng.integers(2, 9)),
                                 int(rng.integers(2, 9))))
        ref = np.linalg.svd(M, compute_uv=False)[0]
        assert abs(theory.spectral_norm(M) - ref) <= 1e-8 * max(ref, 1.0)
    assert theory.spectral_norm(np.zeros((3, 3))) == 0.0


def test_sigma_min_matches_svd():
    rng = np.random.default_rng(1)
    for _ in range(20):
        d = int(rng.integers(2, 7))
        M = rng.standard_normal((d + 2, d))
        ref = np.linalg.svd(M, compute_uv=False)[-1]
        assert abs(theory.sigma_min(M) - ref) <= 1e-6 * max(ref, 1.0)


def test_materialize_jacobian_matches_finite_differences():
    net = nets.init_dense([3, 6, 4], seed=2)
    x = np.array([0.2, -0.5, 1.0])
    J = theory.materialize_jacobian(net, x)
    J_fd = nets.finite_diff_jacobian(net, x)
    assert np.abs(J - J_fd).max() <= 1e-7


def test_materialize_local_rank_check():
    f = nets.DenseNet([nets.Layer(np.diag([1.0, 0.0]), np.zeros(2),
                                  "identity")])
    g = nets.init_dense([2, 2], seed=0)
    with pytest.raises(theory.RankDeficientError):
        theory.materialize_local(Deceptron(f, g), np.zeros(2))


def test_deviation_bound_holds_randomized():
    rep = theory.run_suite("deviation", trials=200, seed=0)
    assert rep["failures"] == 0
    assert rep["worst_margin"] >= -1e-10


def test_pseudoinverse_collapse():
    rep = theory.run_suite("collapse", trials=200, seed=0)
    assert rep["failures"] == 0


def test_full_residual_two_term_bound():
    rep = theory.run_suite("full_residual", trials=200, seed=0)
    assert rep["failures"] == 0


def test_full_residual_split_is_orthogonal():
    rng = np.random.default_rng(3)
    J, G, _ = theory._random_instance(rng)
    r = rng.standard_normal(J.shape[0])
    res = theory.check_full_residual(J, G, r, 0.5)
    # Pythagoras for the split recorded in the result
    assert abs(res.r_par_norm ** 2 + res.r_perp_norm ** 2
               - res.residual_norm ** 2) <= 1e-8


def test_first_order_slope_quadratic():
    rep = theory.run_suite("first_order", trials=150, seed=0)
    assert rep["failures"] == 0
    for s in rep["slopes"]:
        assert 1.9 <= s <= 2.1


def test_first_order_linear_pair_all_zero():
    # a perfectly linear pair has zero Taylor remainder at every alpha
    rng = np.random.default_rng(4)
    A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    f = nets.DenseNet([nets.Layer(A, np.zeros(3), "identity")])
    g = nets.DenseNet([nets.Layer(np.linalg.inv(A), np.zeros(3), "identity")])
    dec = Deceptron(f, g)
    fit = theory.check_first_order(dec, np.zeros(3), rng.standard_normal(3))
    assert fit.all_zero


def test_first_order_requires_consistency():
    # away from the origin a random pair has no reason to satisfy g(f(x)) = x
    f = nets.init_dense([3, 4], seed=5)
    g = nets.init_dense([4, 5, 3], seed=6)
    with pytest.raises(theory.HypothesisViolationError):
        theory.check_first_order(Deceptron(f, g), np.ones(3), np.zeros(4))


def test_consistent_pair_construction():
    dec = theory.make_consistent_pair(seed=(9, 1))
    x = np.zeros(dec.d_in)
    gx = nets.evaluate(dec.g, nets.evaluate(dec.f, x))
    assert np.linalg.norm(gx - x) <= 1e-12


def test_hutchinson_exhaustive_identity():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((5, 5))
    est, exact = theory.check_hutchinson(A, 5, "exhaustive_basis")
    assert abs(est * 5 - exact) <= 1e-10


def test_hutchinson_rademacher_convergence():
    A = np.random.default_rng(8).standard_normal((4, 4))
    est, exact = theory.check_hutchinson(A, 100_000, "rademacher", seed=1)
    assert abs(est - exact) / exact < 0.02


def test_run_all_structure():
    reports = theory.run_all(trials=20, seed=2)
    assert [r["suite"] for r in reports] == ["first_order", "deviation", "collapse",
                                             "trace_probe", "full_residual"]
    assert all(r["failures"] == 0 for r in reports)


def test_run_suite_deterministic():
    a = theory.run_suite("deviation", trials=30, seed=5)
    b = theory.run_suite("deviation", trials=30, seed=5)
    assert a == b
    with pytest.raises(ValueError):
        theory.run_suite("no_such_suite")
