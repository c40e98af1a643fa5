"""Inverse-preconditioned solver: residual-corrected measurement-space
proposals pulled back through the learned reverse map, with relaxation, box
projection, and Armijo backtracking acceptance.

The objective follows the mean-squared convention
Phi(x) = 1/2 * mean((f(x) - y*)^2), under which the default Armijo
constants are calibrated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .core import ProbeConfig, rjcp
from .nets import ShapeError


@dataclass
class DipgConfig:
    alpha0: float = 1.0
    c: float = 1e-4
    beta: float = 0.5
    rho: float = 0.4
    max_iters: int = 80
    backtrack_budget: int = 8
    box: tuple | None = None  # (lower, upper) arrays in solver coordinates
    stop_rel_tol: float = 0.30
    require_strict_decrease: bool = True
    rjcp_probes: int = 4

    def __post_init__(self):
        if not (0 < self.c < 1):
            raise ValueError("Armijo constant c must lie in (0, 1)")
        if not (0 < self.beta < 1):
            raise ValueError("backtracking factor must lie in (0, 1)")
        if not (0 < self.rho <= 1):
            raise ValueError("relaxation must lie in (0, 1]")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.box is not None:
            lo, hi = (np.asarray(b, float) for b in self.box)
            if np.any(lo > hi):
                raise ValueError("box lower bound exceeds upper bound")
            self.box = (lo, hi)


@dataclass
class IterRecord:
    t: int
    residual_norm: float
    phi: float
    rmse: float = np.nan
    accepted_alpha: float = np.nan
    step_norm: float = np.nan
    cosine_neg_grad: float = np.nan
    rjcp: float = np.nan
    backtracks_used: int = 0
    wall_time_s: float = 0.0
    # acceptance bookkeeping for the post-hoc sufficient-decrease audit
    dir_deriv: float = np.nan
    armijo_rhs: float = np.nan


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    final_x: np.ndarray | None = None
    terminated_by: str = ""
    total_time_s: float = 0.0
    method: str = "dipg"
    c: float = np.nan

    def residual_ratios(self):
        r0 = self.records[0].residual_norm
        if r0 == 0:
            return np.zeros(len(self.records))
        return np.array([rec.residual_norm for rec in self.records]) / r0


def project_box(x, box):
    if box is None:
        return x
    return np.clip(x, box[0], box[1])


def objective(dec, x, y_star):
    """Phi(x) = 1/2 mean((f(x) - y*)^2); returns (phi, residual)."""
    y = nets.evaluate(dec.f, x)
    y_star = np.asarray(y_star, float)
    if y_star.shape != y.shape:
        raise ShapeError("observation dimension mismatch")
    r = y - y_star
    return 0.5 * float(np.mean(r * r)), r


def grad_objective(dec, x, r):
    """Gradient of the mean-convention objective via one reverse pass."""
    _, w = nets.vjp(dec.f, x, r / r.shape[0])
    return w


def propose(dec, x_t, y_star, alpha, cfg):
    """One residual-corrected proposal: pull back, relax, project.

    Returns (x_tilde, p) with p = x_tilde - x_t.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y_t = nets.evaluate(dec.f, x_t)
    r_t = y_t - np.asarray(y_star, float)
    y_prop = y_t - alpha * r_t
    x_prop = nets.evaluate(dec.g, y_prop)
    x_tilde = project_box((1.0 - cfg.rho) * x_t + cfg.rho * x_prop, cfg.box)
    return x_tilde, x_tilde - x_t


def armijo_accept(phi_t, phi_tilde, dir_deriv, c, require_strict=False):
    """Sufficient-decrease test: phi_tilde <= phi_t + c * dir_deriv."""
    if not (0 < c < 1):
        raise ValueError("c must lie in (0, 1)")
    ok = phi_tilde <= phi_t + c * dir_deriv
    if require_strict:
        ok = ok and phi_tilde < phi_t
    return bool(ok)


def _rmse(dec, x, ground_truth):
    if ground_truth is None:
        return np.nan
    d = dec.denormalize_x(x) - np.asarray(ground_truth, float)
    return float(np.sqrt(np.mean(d * d)))


def solve(dec, y_star, x0, cfg=None, ground_truth=None, run_seed=0,
          compute_rjcp=True):
    """Run the safeguarded inverse solve from x0 (solver coordinates).

    Per outer iteration: evaluate the residual, test the stopping rule,
    backtrack alpha from alpha0 until a proposal passes the Armijo test, and
    terminate when the backtracking budget is exhausted without acceptance.
    ground_truth, when given, is the raw-space latent used for RMSE columns.
    """
    cfg = cfg or DipgConfig()
    x = project_box(np.asarray(x0, dtype=np.float64).copy(), cfg.box)
    trace = SolveTrace(method="dipg", c=cfg.c)
    t_start = time.perf_counter()
    r0_norm = None

    for t in range(cfg.max_iters + 1):
        it_start = time.perf_counter()
        phi, r = objective(dec, x, y_star)
        if not np.isfinite(phi):
            trace.terminated_by = "numeric_error"
            break
        r_norm = float(np.linalg.norm(r))
        if r0_norm is None:
            r0_norm = r_norm
        rec = IterRecord(t=t, residual_norm=r_norm, phi=phi,
                         rmse=_rmse(dec, x, ground_truth))
        if compute_rjcp:
            rec.rjcp = rjcp(dec, x, ProbeConfig("rademacher", cfg.rjcp_probes,
                                                (run_seed, t)))
        trace.records.append(rec)

        if r0_norm == 0 or r_norm / r0_norm <= cfg.stop_rel_tol:
            rec.wall_time_s = time.perf_counter() - it_start
            trace.terminated_by = "tolerance"
            break
        if t == cfg.max_iters:
            rec.wall_time_s = time.perf_counter() - it_start
            trace.terminated_by = "max_iters"
            break

        grad = grad_objective(dec, x, r)
        accepted = False
        alpha = cfg.alpha0
        for bt in range(cfg.backtrack_budget):
            x_tilde, p = propose(dec, x, y_star, alpha, cfg)
            phi_tilde, _ = objective(dec, x_tilde, y_star)
            dir_deriv = float(grad @ p)
            if armijo_accept(phi, phi_tilde, dir_deriv, cfg.c,
                             cfg.require_strict_decrease):
                gnorm = np.linalg.norm(grad)
                pnorm = np.linalg.norm(p)
                rec.accepted_alpha = alpha
                rec.step_norm = float(pnorm)
                rec.dir_deriv = dir_deriv
                rec.armijo_rhs = phi + cfg.c * dir_deriv
                rec.backtracks_used = bt
                rec.cosine_neg_grad = (float(p @ (-grad) / (pnorm * gnorm))
                                       if pnorm > 0 and gnorm > 0 else np.nan)
                x = x_tilde
                accepted = True
                break
            alpha *= cfg.beta
        rec.wall_time_s = time.perf_counter() - it_start
        if not accepted:
            rec.backtracks_used = cfg.backtrack_budget
            trace.terminated_by = "backtrack_exhausted"
            break

    trace.final_x = x
    trace.total_time_s = time.perf_counter() - t_start
    return trace


def warm_start(dec, y_star, cfg=None):
    """One-shot reverse warm start: project g(y*) into the box."""
    x0 = nets.evaluate(dec.g, np.asarray(y_star, float))
    return project_box(x0, cfg.box if cfg is not None else None)
