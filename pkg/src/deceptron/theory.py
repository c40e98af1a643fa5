"""Numeric verification of the local Gauss-Newton equivalence theory.

Checks, on constructed and randomized instances: the first-order expansion
of the pulled-back proposal (log-log slope 2 of the deviation), the
conditioning-scaled deviation bound on range-restricted residuals, its
collapse to zero under exact pseudoinverse consistency, the full-residual
two-term bound, and the probe identity E||A xi||^2 = ||A||_F^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .core import ProbeConfig, sample_probes, seeded_rng


class RankDeficientError(ValueError):
    """Forward Jacobian is (numerically) rank deficient."""


class HypothesisViolationError(ValueError):
    """Local consistency g(f(x)) = x does not hold within tolerance."""


@dataclass
class DeviationCheckResult:
    lhs: float
    rhs: float
    composition_defect: float
    sigma_min: float
    residual_norm: float
    u_norm: float = np.nan
    r_par_norm: float = np.nan
    r_perp_norm: float = np.nan
    g_norm: float = np.nan

    @property
    def holds(self):
        return self.lhs <= self.rhs + 1e-10


@dataclass
class SlopeFit:
    alphas: list
    deviations: list
    fitted_slope: float
    r_squared: float
    all_zero: bool = False


# ---------------------------------------------------------------------------
# spectral helpers (power iteration; no dense SVD)
# ---------------------------------------------------------------------------

def spectral_norm(M, tol=1e-10, max_iters=10_000, seed=0):
    """Largest singular value via power iteration on M^T M."""
    M = np.asarray(M, float)
    if not M.any():
        return 0.0
    v = seeded_rng((seed, 31)).standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iters):
        w = M.T @ (M @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        w /= nrm
        sigma_new = np.linalg.norm(M @ w)
        if abs(sigma_new - sigma) <= tol * max(sigma_new, 1.0):
            return sigma_new
        sigma, v = sigma_new, w
    return sigma


def sigma_min(J, tol=1e-10, max_iters=10_000, seed=0):
    """Smallest singular value via power iteration on (J^T J)^{-1}."""
    J = np.asarray(J, float)
    JtJ = J.T @ J
    v = seeded_rng((seed, 37)).standard_normal(J.shape[1])
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(max_iters):
        try:
            w = np.linalg.solve(JtJ, v)
        except np.linalg.LinAlgError:
            raise RankDeficientError("singular normal matrix") from None
        nrm = np.linalg.norm(w)
        if nrm == 0:
            raise RankDeficientError("singular normal matrix")
        w /= nrm
        mu_new = np.linalg.norm(np.linalg.solve(JtJ, w))
        if abs(mu_new - mu) <= tol * max(mu_new, 1.0):
            return 1.0 / np.sqrt(mu_new)
        mu, v = mu_new, w
    return 1.0 / np.sqrt(mu)


def materialize_jacobian(net, x):
    """Exact Jacobian by probing tangent columns (test/diagnostic use)."""
    x = np.asarray(x, float)
    cols = [nets.jvp(net, x, e)[1] for e in np.eye(len(x))]
    return np.stack(cols, axis=1)


def materialize_local(dec, x):
    """Local matrices at x: (J, G, r-free pieces) for the theory checks.

    Returns (J, G, y, J_pinv, E) with J = J_f(x), G = J_g(f(x)),
    J_pinv = (J^T J)^{-1} J^T by dense solve and E = G - J_pinv.
    """
    x = np.asarray(x, float)
    J = materialize_jacobian(dec.f, x)
    smin = sigma_min(J)
    if smin <= 1e-8:
        raise RankDeficientError(f"sigma_min(J) = {smin:.3e}")
    y = nets.evaluate(dec.f, x)
    G = materialize_jacobian(dec.g, y)
    J_pinv = np.linalg.solve(J.T @ J, J.T)
    E = G - J_pinv
    return J, G, y, J_pinv, E


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def check_first_order(dec, x, y_star, alpha_grid=(1e-2, 1e-3, 1e-4, 1e-5),
                      consistency_tol=1e-6):
    """Deviation of the pulled-back proposal from its first-order expansion.

    Requires local consistency g(f(x)) = x within tolerance. The deviation
    ||g(f(x) - a r) - (x - a J^+ r - a E r)|| is the Taylor remainder of the
    reverse map, so its log-log slope in a should be ~2 for smooth nonlinear
    reverse maps and identically zero for linear pairs.
    """
    x = np.asarray(x, float)
    gx = nets.evaluate(dec.g, nets.evaluate(dec.f, x))
    err = np.linalg.norm(gx - x)
    if err > consistency_tol:
        raise HypothesisViolationError(
            f"||g(f(x)) - x|| = {err:.3e} exceeds {consistency_tol:.1e}")
    J, G, y, J_pinv, E = materialize_local(dec, x)
    r = y - np.asarray(y_star, float)
    devs = []
    for a in alpha_grid:
        prop = nets.evaluate(dec.g, y - a * r)
        first_order = x - a * (J_pinv @ r) - a * (E @ r)
        devs.append(float(np.linalg.norm(prop - first_order)))
    devs = np.array(devs)
    if np.all(devs < 1e-13):
        return SlopeFit(list(alpha_grid), devs.tolist(), np.nan, np.nan,
                        all_zero=True)
    la = np.log(np.asarray(alpha_grid, float))
    ld = np.log(np.maximum(devs, 1e-300))
    slope, intercept = np.polyfit(la, ld, 1)
    pred = slope * la + intercept
    ss_res = float(np.sum((ld - pred) ** 2))
    ss_tot = float(np.sum((ld - ld.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(list(alpha_grid), devs.tolist(), float(slope), r2)


def check_deviation_bound(J, G, u, alpha):
    """Range-restricted deviation bound: r = J u by construction."""
    J = np.asarray(J, float)
    G = np.asarray(G, float)
    u = np.asarray(u, float)
    r = J @ u
    J_pinv = np.linalg.solve(J.T @ J, J.T)
    lhs = float(np.linalg.norm(-alpha * (G @ r) + alpha * (J_pinv @ r)))
    defect = spectral_norm(G @ J - np.eye(J.shape[1]))
    smin = sigma_min(J)
    rhs = alpha * defect * float(np.linalg.norm(r)) / smin
    return DeviationCheckResult(
        lhs=lhs, rhs=rhs, composition_defect=defect, sigma_min=smin,
        residual_norm=float(np.linalg.norm(r)), u_norm=float(np.linalg.norm(u)),
    )


def check_full_residual(J, G, r, alpha):
    """Two-term bound for arbitrary residuals split along Range(J)."""
    J = np.asarray(J, float)
    G = np.asarray(G, float)
    r = np.asarray(r, float)
    J_pinv = np.linalg.solve(J.T @ J, J.T)
    r_par = J @ (J_pinv @ r)
    r_perp = r - r_par
    # decomposition sanity: components orthogonal, r_perp invisible to J^+
    assert abs(float(r_par @ r_perp)) <= 1e-8 * max(1.0, float(r @ r))
    assert np.linalg.norm(J_pinv @ r_perp) <= 1e-8 * max(1.0, np.linalg.norm(r))
    lhs = float(np.linalg.norm(-alpha * (G @ r) + alpha * (J_pinv @ r)))
    defect = spectral_norm(G @ J - np.eye(J.shape[1]))
    smin = sigma_min(J)
    g_norm = spectral_norm(G)
    rhs = alpha * (defect / smin * np.linalg.norm(r_par)
                   + g_norm * np.linalg.norm(r_perp))
    return DeviationCheckResult(
        lhs=lhs, rhs=float(rhs), composition_defect=defect, sigma_min=smin,
        residual_norm=float(np.linalg.norm(r)),
        r_par_norm=float(np.linalg.norm(r_par)),
        r_perp_norm=float(np.linalg.norm(r_perp)), g_norm=g_norm,
    )


def check_hutchinson(A, k, distribution="rademacher", seed=0):
    """Probe-mean of ||A xi||^2 against the exact Frobenius value.

    Also asserts the spectral norm never exceeds the Frobenius norm.
    """
    A = np.asarray(A, float)
    probes = sample_probes(ProbeConfig(distribution, max(k, 1), seed), A.shape[1])
    estimate = float(np.mean(np.sum((probes @ A.T) ** 2, axis=1)))
    exact = float(np.sum(A * A))
    assert spectral_norm(A) ** 2 <= exact + 1e-10
    return estimate, exact


# ---------------------------------------------------------------------------
# randomized suites (CLI-facing)
# ---------------------------------------------------------------------------

def _random_instance(rng, d_in=None, d_out=None, sigma_range=(0.1, 3.0),
                     perturb=0.5):
    d_in = d_in or int(rng.integers(2, 9))
    d_out = d_out or d_in + int(rng.integers(0, 5))
    u, _ = np.linalg.qr(rng.standard_normal((d_out, d_out)))
    v, _ = np.linalg.qr(rng.standard_normal((d_in, d_in)))
    sig = rng.uniform(*sigma_range, size=d_in)
    J = u[:, :d_in] @ np.diag(sig) @ v.T
    J_pinv = v @ np.diag(1.0 / sig) @ u[:, :d_in].T
    G = J_pinv + perturb * rng.standard_normal(J_pinv.shape)
    return J, G, J_pinv


def run_suite(suite, trials=500, seed=0):
    """Run one named randomized suite; returns a JSON-friendly report."""
    suite_ids = {"first_order": 1, "deviation": 2, "collapse": 3,
                 "trace_probe": 4, "full_residual": 5}
    if suite not in suite_ids:
        raise ValueError(f"unknown suite {suite!r}")
    rng = seeded_rng((seed, suite_ids[suite]))
    failures = 0
    worst_margin = np.inf
    details = {}

    if suite == "deviation":
        for _ in range(trials):
            J, G, _ = _random_instance(rng)
            u = rng.standard_normal(J.shape[1])
            res = check_deviation_bound(J, G, u, float(rng.uniform(1e-3, 1.0)))
            margin = res.rhs - res.lhs
            worst_margin = min(worst_margin, margin)
            failures += not res.holds
    elif suite == "collapse":
        for _ in range(trials):
            J, _, J_pinv = _random_instance(rng, perturb=0.0)
            u = rng.standard_normal(J.shape[1])
            res = check_deviation_bound(J, J_pinv, u, float(rng.uniform(1e-3, 1.0)))
            worst_margin = min(worst_margin, 1e-10 - res.lhs)
            failures += res.lhs > 1e-10
    elif suite == "full_residual":
        for _ in range(trials):
            J, G, _ = _random_instance(rng)
            r = rng.standard_normal(J.shape[0])
            res = check_full_residual(J, G, r, float(rng.uniform(1e-3, 1.0)))
            margin = res.rhs - res.lhs
            worst_margin = min(worst_margin, margin)
            failures += not res.holds
    elif suite == "trace_probe":
        for _ in range(trials):
            d = int(rng.integers(2, 9))
            A = rng.standard_normal((d, d))
            est, exact = check_hutchinson(A, d, "exhaustive_basis")
            err = abs(est * d - exact)
            worst_margin = min(worst_margin, 1e-9 - err)
            failures += err > 1e-9
        est, exact = check_hutchinson(seeded_rng((seed, 5)).standard_normal((4, 4)),
                                      100_000, "rademacher", seed=(seed, 6))
        details["rademacher_rel_err"] = abs(est - exact) / exact
        failures += details["rademacher_rel_err"] > 0.02
    elif suite == "first_order":
        slopes = []
        for i in range(max(trials // 50, 3)):
            dec = make_consistent_pair(seed=(seed, 200 + i))
            x = np.zeros(dec.d_in)
            y_star = nets.evaluate(dec.f, x) + seeded_rng((seed, 300 + i)).standard_normal(dec.d_out)
            fit = check_first_order(dec, x, y_star)
            slopes.append(fit.fitted_slope)
            failures += not (1.9 <= fit.fitted_slope <= 2.1 and fit.r_squared >= 0.99)
        details["slopes"] = slopes
        worst_margin = float(min(min(s - 1.9 for s in slopes),
                                 min(2.1 - s for s in slopes)))
    else:
        raise ValueError(f"unknown suite {suite!r}")

    return {"suite": suite, "trials": trials, "failures": int(failures),
            "worst_margin": float(worst_margin), **details}


def make_consistent_pair(d_in=4, d_out=4, seed=0, hidden=8):
    """Smooth nonlinear pair with exact pointwise consistency g(f(x)) = x at x=0.

    f is linear and invertible-ish; g is a tanh net whose output bias is
    shifted so that g(f(0)) = 0 exactly, leaving a generic smooth remainder.
    """
    from .core import Deceptron

    rng = seeded_rng(seed)
    sig = rng.uniform(0.7, 1.8, size=d_in)
    u, _ = np.linalg.qr(rng.standard_normal((d_out, d_out)))
    v, _ = np.linalg.qr(rng.standard_normal((d_in, d_in)))
    B = u[:, :d_in] @ np.diag(sig) @ v.T
    f = nets.DenseNet([nets.Layer(B, np.zeros(d_out), "identity")])
    g = nets.init_dense([d_out, hidden, d_in], seed=int(rng.integers(2**31)),
                        scale=1.5)
    # nonzero hidden biases keep the curvature of g generic at the
    # consistency point (tanh is odd, so zero preactivations would kill
    # the quadratic term and inflate the remainder's order)
    g.layers[0].b = rng.uniform(-0.8, 0.8, size=hidden)
    y0 = nets.evaluate(f, np.zeros(d_in))
    shift = nets.evaluate(g, y0)
    g.layers[-1].b = g.layers[-1].b - shift
    return Deceptron(f, g)


def run_all(trials=500, seed=0):
    return [run_suite(s, trials, seed) for s in
            ("first_order", "deviation", "collapse", "trace_probe", "full_residual")]
