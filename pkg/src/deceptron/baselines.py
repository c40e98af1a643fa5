"""Classical solvers on the surrogate least-squares objective.

Gradient descent, Gauss-Newton and Levenberg-Marquardt (both via matrix-free
conjugate gradient on the normal equations), and L-BFGS with two-loop
recursion. All emit SolveTrace records schema-identical to the learned
solver so the benchmark harness can interleave them.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import nets
from .core import Deceptron
from .dipg import IterRecord, SolveTrace, project_box


@dataclass
class CgResult:
    x: np.ndarray
    iters: int
    converged: bool
    breakdown: bool = False


@dataclass
class BaselineConfig:
    method: str = "gn"  # gd | gn | lm | lbfgs
    max_iters: int = 80
    stop_rel_tol: float = 0.30
    gd_lr: float = 1.0
    cg_tol: float = 1e-8
    cg_max_iters: int | None = None  # default 2 * d_in
    lm_lambda0: float = 1e-3
    lm_up: float = 10.0
    lm_down: float = 0.1
    lm_max_rejects: int = 15
    lbfgs_memory: int = 10
    line_search: str = "armijo"  # armijo | none (gn only)
    c: float = 1e-4
    beta: float = 0.5
    ls_budget: int = 20
    box: tuple | None = None

    def __post_init__(self):
        if self.cg_tol <= 0:
            raise ValueError("cg_tol must be positive")
        if self.lm_up <= 1:
            raise ValueError("lm_up must exceed 1")
        if not (0 < self.lm_down < 1):
            raise ValueError("lm_down must lie in (0, 1)")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if self.box is not None:
            lo, hi = (np.asarray(b, float) for b in self.box)
            if np.any(lo > hi):
                raise ValueError("box lower bound exceeds upper bound")
            self.box = (lo, hi)


def cg_normal(jvp_f, vjp_f, x, rhs, lam, tol, max_iters):
    """Conjugate gradient on (J^T J + lam I) dx = rhs, matrix-free.

    The operator is applied as v -> vjp(jvp(v)) + lam v at the linearization
    point x. Terminates when the CG residual drops below tol * ||rhs|| or on
    nonpositive curvature (roundoff breakdown), returning the best iterate.
    """
    rhs = np.asarray(rhs, float)
    dx = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rr = float(r @ r)
    stop = (tol * np.linalg.norm(rhs)) ** 2
    if rr <= stop:
        return CgResult(dx, 0, True)
    for k in range(1, max_iters + 1):
        Ap = vjp_f(x, jvp_f(x, p)) + lam * p
        pAp = float(p @ Ap)
        if pAp <= 0:
            return CgResult(dx, k - 1, False, breakdown=True)
        a = rr / pAp
        dx += a * p
        r -= a * Ap
        rr_new = float(r @ r)
        if rr_new <= stop:
            return CgResult(dx, k, True)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CgResult(dx, max_iters, False)


def _forward_net(model):
    return model.f if isinstance(model, Deceptron) else model


def _rmse(model, x, ground_truth):
    if ground_truth is None:
        return np.nan
    if isinstance(model, Deceptron):
        x = model.denormalize_x(x)
    d = np.asarray(x, float) - np.asarray(ground_truth, float)
    return float(np.sqrt(np.mean(d * d)))


class _Run:
    """Shared per-iteration bookkeeping for the classical solvers."""

    def __init__(self, model, y_star, x0, cfg, ground_truth, method):
        self.model = model
        self.f = _forward_net(model)
        self.y_star = np.asarray(y_star, float)
        self.cfg = cfg
        self.gt = ground_truth
        self.x = project_box(np.asarray(x0, float).copy(), cfg.box)
        self.trace = SolveTrace(method=method, c=cfg.c)
        self.r0_norm = None
        self.t0 = time.perf_counter()

    def phi_r(self, x):
        y = nets.evaluate(self.f, x)
        r = y - self.y_star
        return 0.5 * float(np.mean(r * r)), r

    def grad(self, x, r):
        _, w = nets.vjp(self.f, x, r / r.shape[0])
        return w

    def begin_iter(self, t):
        self.it_start = time.perf_counter()
        phi, r = self.phi_r(self.x)
        r_norm = float(np.linalg.norm(r))
        if self.r0_norm is None:
            self.r0_norm = r_norm
        rec = IterRecord(t=t, residual_norm=r_norm, phi=phi,
                         rmse=_rmse(self.model, self.x, self.gt))
        self.trace.records.append(rec)
        if not np.isfinite(phi):
            return rec, phi, r, "numeric_error"
        if self.r0_norm == 0 or r_norm / self.r0_norm <= self.cfg.stop_rel_tol:
            return rec, phi, r, "tolerance"
        if t == self.cfg.max_iters:
            return rec, phi, r, "max_iters"
        return rec, phi, r, None

    def log_step(self, rec, alpha, p, grad, dir_deriv, armijo_rhs, backtracks):
        pnorm = float(np.linalg.norm(p))
        gnorm = float(np.linalg.norm(grad))
        rec.accepted_alpha = alpha
        rec.step_norm = pnorm
        rec.dir_deriv = dir_deriv
        rec.armijo_rhs = armijo_rhs
        rec.backtracks_used = backtracks
        rec.cosine_neg_grad = (float(p @ (-grad) / (pnorm * gnorm))
                               if pnorm > 0 and gnorm > 0 else np.nan)
        rec.wall_time_s = time.perf_counter() - self.it_start

    def finish(self, terminated_by):
        if self.trace.records:
            last = self.trace.records[-1]
            if last.wall_time_s == 0.0:
                last.wall_time_s = time.perf_counter() - self.it_start
        self.trace.terminated_by = terminated_by
        self.trace.final_x = self.x
        self.trace.total_time_s = time.perf_counter() - self.t0
        return self.trace


def gd_solve(model, y_star, x0, cfg, ground_truth=None):
    """Projected gradient descent with a fixed learning rate."""
    run = _Run(model, y_star, x0, cfg, ground_truth, "gd")
    for t in range(cfg.max_iters + 1):
        rec, phi, r, stop = run.begin_iter(t)
        if stop:
            return run.finish(stop)
        g = run.grad(run.x, r)
        x_new = project_box(run.x - cfg.gd_lr * g, cfg.box)
        p = x_new - run.x
        run.log_step(rec, cfg.gd_lr, p, g, float(g @ p), np.nan, 0)
        run.x = x_new
    return run.finish("max_iters")


def _jvp_at(f):
    return lambda x, v: nets.jvp(f, x, v)[1]


def _vjp_at(f):
    return lambda x, u: nets.vjp(f, x, u)[1]


def gn_solve(model, y_star, x0, cfg, ground_truth=None):
    """Gauss-Newton with matrix-free CG on the normal equations."""
    return _newton_like(model, y_star, x0, cfg, ground_truth, damped=False)


def lm_solve(model, y_star, x0, cfg, ground_truth=None):
    """Levenberg-Marquardt with multiplicative damping adaptation."""
    return _newton_like(model, y_star, x0, cfg, ground_truth, damped=True)


def _newton_like(model, y_star, x0, cfg, ground_truth, damped):
    run = _Run(model, y_star, x0, cfg, ground_truth, "lm" if damped else "gn")
    f = run.f
    jvp_f, vjp_f = _jvp_at(f), _vjp_at(f)
    cg_iters = cfg.cg_max_iters or 2 * f.input_dim
    lam = cfg.lm_lambda0
    for t in range(cfg.max_iters + 1):
        rec, phi, r, stop = run.begin_iter(t)
        if stop:
            return run.finish(stop)
        rhs = -vjp_f(run.x, r)
        g = run.grad(run.x, r)

        if damped:
            accepted = False
            for rej in range(cfg.lm_max_rejects):
                res = cg_normal(jvp_f, vjp_f, run.x, rhs, lam,
                                cfg.cg_tol, cg_iters)
                x_new = project_box(run.x + res.x, cfg.box)
                phi_new, _ = run.phi_r(x_new)
                if phi_new < phi:
                    p = x_new - run.x
                    run.log_step(rec, 1.0, p, g, float(g @ p), phi, rej)
                    run.x = x_new
                    lam = max(lam * cfg.lm_down, 1e-14)
                    accepted = True
                    break
                lam *= cfg.lm_up
            if not accepted:
                rec.backtracks_used = cfg.lm_max_rejects
                return run.finish("backtrack_exhausted")
        else:
            res = cg_normal(jvp_f, vjp_f, run.x, rhs, 0.0, cfg.cg_tol, cg_iters)
            d = res.x
            if cfg.line_search == "none":
                x_new = project_box(run.x + d, cfg.box)
                p = x_new - run.x
                run.log_step(rec, 1.0, p, g, float(g @ p), np.nan, 0)
                run.x = x_new
            else:
                accepted = False
                alpha = 1.0
                for bt in range(cfg.ls_budget):
                    x_new = project_box(run.x + alpha * d, cfg.box)
                    p = x_new - run.x
                    dd = float(g @ p)
                    phi_new, _ = run.phi_r(x_new)
                    if phi_new <= phi + cfg.c * dd:
                        run.log_step(rec, alpha, p, g, dd, phi + cfg.c * dd, bt)
                        run.x = x_new
                        accepted = True
                        break
                    alpha *= cfg.beta
                if not accepted:
                    rec.backtracks_used = cfg.ls_budget
                    return run.finish("backtrack_exhausted")
    return run.finish("max_iters")


def lbfgs_two_loop(grad, pairs, gamma):
    """Two-loop recursion: returns -H grad for the stored curvature pairs."""
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    q *= gamma
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def lbfgs_solve(model, y_star, x0, cfg, ground_truth=None):
    """L-BFGS with Armijo backtracking; pairs with s.y <= 1e-10 are dropped."""
    run = _Run(model, y_star, x0, cfg, ground_truth, "lbfgs")
    pairs = deque(maxlen=cfg.lbfgs_memory)
    g_prev = None
    x_prev = None
    for t in range(cfg.max_iters + 1):
        rec, phi, r, stop = run.begin_iter(t)
        if stop:
            return run.finish(stop)
        g = run.grad(run.x, r)
        if x_prev is not None:
            s = run.x - x_prev
            yv = g - g_prev
            sy = float(s @ yv)
            if sy > 1e-10:
                pairs.append((s, yv, 1.0 / sy))
        gamma = 1.0
        if pairs:
            s, yv, _ = pairs[-1]
            gamma = float(s @ yv) / float(yv @ yv)
        d = lbfgs_two_loop(g, list(pairs), gamma)
        if float(g @ d) >= 0:
            # not a descent direction; fall back to steepest descent
            pairs.clear()
            d = -g
        accepted = False
        alpha = 1.0
        for bt in range(cfg.ls_budget):
            x_new = project_box(run.x + alpha * d, cfg.box)
            p = x_new - run.x
            dd = float(g @ p)
            phi_new, _ = run.phi_r(x_new)
            if phi_new <= phi + cfg.c * dd:
                run.log_step(rec, alpha, p, g, dd, phi + cfg.c * dd, bt)
                x_prev, g_prev = run.x, g
                run.x = x_new
                accepted = True
                break
            alpha *= cfg.beta
        if not accepted:
            rec.backtracks_used = cfg.ls_budget
            return run.finish("backtrack_exhausted")
    return run.finish("max_iters")


SOLVERS = {"gd": gd_solve, "gn": gn_solve, "lm": lm_solve, "lbfgs": lbfgs_solve}


def baseline_solve(model, y_star, x0, cfg, ground_truth=None):
    try:
        fn = SOLVERS[cfg.method]
    except KeyError:
        raise ValueError(f"unknown baseline method {cfg.method!r}") from None
    return fn(model, y_star, x0, cfg, ground_truth)
