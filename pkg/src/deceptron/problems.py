"""Desk-scale inverse-problem families: ground-truth forward operators,
latent samplers, dataset generation and normalization.

The forward operators here generate the data; they are distinct from the
learned forward surrogate that the solvers differentiate through.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dst, idst
from scipy.ndimage import gaussian_filter

from .core import seeded_rng


@dataclass
class Problem:
    name: str
    d_in: int
    d_out: int
    sample_latent: callable  # seed -> latent vector
    true_forward: callable  # x -> y
    box: tuple | None = None
    rmse_success_threshold: float = 0.1
    basin_threshold: float = 0.095
    noise_std: float = 0.0
    config: dict = field(default_factory=dict)


@dataclass
class Dataset:
    problem: str
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    x_norm: tuple = None
    y_norm: tuple = None
    meta: dict = field(default_factory=dict)

    def _norm(self, a, stats):
        return (a - stats[0]) / stats[1]

    @property
    def train_xn(self):
        return self._norm(self.train_x, self.x_norm)

    @property
    def train_yn(self):
        return self._norm(self.train_y, self.y_norm)

    @property
    def val_xn(self):
        return self._norm(self.val_x, self.x_norm)

    @property
    def val_yn(self):
        return self._norm(self.val_y, self.y_norm)

    @property
    def test_xn(self):
        return self._norm(self.test_x, self.x_norm)

    @property
    def test_yn(self):
        return self._norm(self.test_y, self.y_norm)


# ---------------------------------------------------------------------------
# forward operators
# ---------------------------------------------------------------------------

def heat1d_semigroup(x, nu, t_obs):
    """Diffusion semigroup on sine modes: mode k decays by exp(-nu k^2 t)."""
    n = len(x)
    coeffs = dst(np.asarray(x, float), type=1)
    k = np.arange(1, n + 1, dtype=float)
    coeffs *= np.exp(-nu * k * k * t_obs)
    return idst(coeffs, type=1)


def heat1d_forward(x, nu=0.05, t_obs=1.0, gamma=1.5):
    """1-D heat semigroup followed by a pointwise tanh observation."""
    x = np.asarray(x, float)
    n = len(x)
    if n & (n - 1) != 0 or n == 0:
        raise ValueError("grid size must be a power of two")
    if nu <= 0 or t_obs <= 0:
        raise ValueError("nu and t_obs must be positive")
    return np.tanh(gamma * heat1d_semigroup(x, nu, t_obs))


def periodic_laplacian(u):
    return (np.roll(u, 1, 0) + np.roll(u, -1, 0)
            + np.roll(u, 1, 1) + np.roll(u, -1, 1) - 4.0 * u)


def heat2d_forward(x, steps=10, kappa=0.2, blur_width=1.0):
    """Explicit periodic diffusion, Gaussian blur, pointwise distortion.

    x is an (m, m) field (or its flattened form); returns a flattened vector
    y = u + 0.3 tanh(2u).
    """
    x = np.asarray(x, float)
    if x.ndim == 1:
        m = int(round(np.sqrt(x.size)))
        if m * m != x.size:
            raise ValueError("flattened field is not square")
        x = x.reshape(m, m)
    if kappa > 0.25:  # dt = ds = 1 in grid units
        raise ValueError("explicit scheme unstable: kappa must be <= 0.25")
    u = x.copy()
    for _ in range(steps):
        u = u + kappa * periodic_laplacian(u)
    if blur_width > 0:
        u = gaussian_filter(u, sigma=blur_width, mode="wrap")
    y = u + 0.3 * np.tanh(2.0 * u)
    return y.ravel()


# ---------------------------------------------------------------------------
# latent samplers
# ---------------------------------------------------------------------------

def sample_heat1d_latent(n, seed):
    """Random superposition of 3-6 low-frequency sine modes."""
    rng = seeded_rng(seed)
    s = np.arange(1, n + 1) / (n + 1)
    n_modes = int(rng.integers(3, 7))
    x = np.zeros(n)
    for _ in range(n_modes):
        k = int(rng.integers(1, 7))
        a = rng.uniform(-1.0, 1.0)
        x += a * np.sin(k * np.pi * s)
    return x


def sample_heat2d_latent(m, seed, box=1.5):
    """Sum of 2-4 randomly placed Gaussian bumps, clipped to the box."""
    rng = seeded_rng(seed)
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    x = np.zeros((m, m))
    for _ in range(int(rng.integers(2, 5))):
        ci, cj = rng.uniform(0, m, size=2)
        width = rng.uniform(1.5, 3.5)
        amp = rng.uniform(-1.0, 1.0)
        # periodic distance so bumps wrap like the forward stencil
        di = np.minimum(np.abs(ii - ci), m - np.abs(ii - ci))
        dj = np.minimum(np.abs(jj - cj), m - np.abs(jj - cj))
        x += amp * np.exp(-(di * di + dj * dj) / (2.0 * width * width))
    return np.clip(x, -box, box).ravel()


# ---------------------------------------------------------------------------
# problem constructors
# ---------------------------------------------------------------------------

def linear_problem(d_in, d_out, seed=0):
    """Seeded well-conditioned linear map y = A x, singular values in [.5, 2].

    The matrix and its pseudoinverse are exposed via problem.config for
    analytic oracles.
    """
    if d_out < d_in:
        raise ValueError("need d_out >= d_in for full column rank")
    rng = seeded_rng((seed, 101))
    u, _ = np.linalg.qr(rng.standard_normal((d_out, d_out)))
    v, _ = np.linalg.qr(rng.standard_normal((d_in, d_in)))
    sig = rng.uniform(0.5, 2.0, size=d_in)
    A = u[:, :d_in] @ np.diag(sig) @ v.T
    A_pinv = v @ np.diag(1.0 / sig) @ u[:, :d_in].T

    def sampler(s):
        return seeded_rng(s).standard_normal(d_in)

    return Problem(
        name="linear",
        d_in=d_in,
        d_out=d_out,
        sample_latent=sampler,
        true_forward=lambda x: A @ np.asarray(x, float),
        box=None,
        rmse_success_threshold=0.05,
        noise_std=0.0,
        config={"matrix": A, "pseudoinverse": A_pinv, "seed": seed},
    )


def heat1d_problem(n=64, nu=0.05, t_obs=1.0, gamma=1.5, noise_std=0.01):
    cfg = {"n": n, "nu": nu, "t_obs": t_obs, "gamma": gamma}
    return Problem(
        name="heat1d",
        d_in=n,
        d_out=n,
        sample_latent=lambda s: sample_heat1d_latent(n, s),
        true_forward=lambda x: heat1d_forward(x, nu, t_obs, gamma),
        box=(np.full(n, -3.0), np.full(n, 3.0)),
        rmse_success_threshold=0.35,
        noise_std=noise_std,
        config=cfg,
    )


def heat2d_problem(m=16, steps=10, kappa=0.2, blur_width=1.0, noise_std=0.01):
    cfg = {"m": m, "steps": steps, "kappa": kappa, "blur_width": blur_width}
    d = m * m
    return Problem(
        name="heat2d",
        d_in=d,
        d_out=d,
        sample_latent=lambda s: sample_heat2d_latent(m, s),
        true_forward=lambda x: heat2d_forward(x, steps, kappa, blur_width),
        box=(np.full(d, -1.5), np.full(d, 1.5)),
        rmse_success_threshold=0.25,
        noise_std=noise_std,
        config=cfg,
    )


PROBLEMS = {
    "linear": lambda **kw: linear_problem(kw.pop("d_in", 8), kw.pop("d_out", 8), **kw),
    "heat1d": heat1d_problem,
    "heat2d": heat2d_problem,
}


def make_problem(name, **kwargs):
    try:
        return PROBLEMS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown problem {name!r}") from None


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def generate_instance(problem, seed):
    """One (x_true, y_observed) pair with seeded observation noise."""
    x = problem.sample_latent((seed, 1))
    y = problem.true_forward(x)
    if problem.noise_std > 0:
        y = y + problem.noise_std * seeded_rng((seed, 2)).standard_normal(len(y))
    return x, y


def make_dataset(problem, n_train, n_val, n_test, seed=0):
    """Generate splits and compute normalization from the training split only."""
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("split sizes must be >= 1")
    counts = {"train": n_train, "val": n_val, "test": n_test}
    data = {}
    offset = 0
    for split, count in counts.items():
        xs, ys = [], []
        for i in range(count):
            x, y = generate_instance(problem, (seed, offset + i))
            xs.append(x)
            ys.append(y)
        data[split] = (np.array(xs), np.array(ys))
        offset += count

    tx, ty = data["train"]
    x_norm = (tx.mean(axis=0), np.maximum(tx.std(axis=0), 1e-8))
    y_norm = (ty.mean(axis=0), np.maximum(ty.std(axis=0), 1e-8))
    return Dataset(
        problem=problem.name,
        train_x=tx, train_y=ty,
        val_x=data["val"][0], val_y=data["val"][1],
        test_x=data["test"][0], test_y=data["test"][1],
        x_norm=x_norm, y_norm=y_norm,
        meta={"seed": seed, "counts": counts, "noise_std": problem.noise_std,
              "config": {k: v for k, v in problem.config.items()
                         if not isinstance(v, np.ndarray)}},
    )


def save_dataset(ds, outdir):
    """Persist a dataset directory: meta.json plus one .npy per array."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {
        "train_x": ds.train_x, "train_y": ds.train_y,
        "val_x": ds.val_x, "val_y": ds.val_y,
        "test_x": ds.test_x, "test_y": ds.test_y,
        "x_mean": ds.x_norm[0], "x_std": ds.x_norm[1],
        "y_mean": ds.y_norm[0], "y_std": ds.y_norm[1],
    }
    for name, arr in arrays.items():
        np.save(out / f"{name}.npy", arr)
    with open(out / "meta.json", "w") as fh:
        json.dump({"problem": ds.problem, **ds.meta}, fh, indent=2)


def load_dataset(outdir):
    out = Path(outdir)
    with open(out / "meta.json") as fh:
        meta = json.load(fh)
    load = lambda name: np.load(out / f"{name}.npy")
    return Dataset(
        problem=meta["problem"],
        train_x=load("train_x"), train_y=load("train_y"),
        val_x=load("val_x"), val_y=load("val_y"),
        test_x=load("test_x"), test_y=load("test_y"),
        x_norm=(load("x_mean"), load("x_std")),
        y_norm=(load("y_mean"), load("y_std")),
        meta={k: v for k, v in meta.items() if k != "problem"},
    )
