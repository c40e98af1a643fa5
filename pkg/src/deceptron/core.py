"""The bidirectional surrogate module and its composition-defect losses.

A Deceptron pairs a forward surrogate f (latent -> measurement) with a
reverse map g (measurement -> latent), together with the normalization
statistics the nets were trained under. The composition penalty and its
runtime diagnostic both measure the probe-averaged defect
||J_g(f(x)) J_f(x) xi - xi||^2, sharing a single math path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .nets import DenseNet, ShapeError


def _flatten_seed(seed, out):
    if isinstance(seed, (tuple, list)):
        for s in seed:
            _flatten_seed(s, out)
    else:
        out.append(int(seed) & 0xFFFFFFFF)


def seeded_rng(seed):
    """default_rng over an int seed or an (arbitrarily nested) tuple of ints."""
    if isinstance(seed, (tuple, list)):
        entropy = []
        _flatten_seed(seed, entropy)
        return np.random.default_rng(np.random.SeedSequence(entropy))
    return np.random.default_rng(seed)


@dataclass
class ProbeConfig:
    distribution: str = "rademacher"  # rademacher | gaussian | exhaustive_basis
    count: int = 4
    seed: int | tuple = 0

    def __post_init__(self):
        if self.distribution not in ("rademacher", "gaussian", "exhaustive_basis"):
            raise ValueError(f"unknown probe distribution {self.distribution!r}")
        if self.count < 1:
            raise ValueError("probe count must be positive")


def sample_probes(cfg, dim):
    """Draw probe vectors as rows of a (k, dim) array.

    Rademacher/gaussian probes satisfy E[xi xi^T] = I; exhaustive_basis
    enumerates the standard basis e_1..e_dim (count is ignored), so the probe
    average of ||A xi||^2 is exactly ||A||_F^2 / dim.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if cfg.distribution == "exhaustive_basis":
        return np.eye(dim)
    rng = seeded_rng(cfg.seed)
    if cfg.distribution == "rademacher":
        return rng.integers(0, 2, size=(cfg.count, dim)).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal((cfg.count, dim))


@dataclass
class Deceptron:
    f: DenseNet
    g: DenseNet
    x_norm: tuple = None  # (mean, std) over latent space
    y_norm: tuple = None  # (mean, std) over measurement space
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.f.output_dim != self.g.input_dim or self.g.output_dim != self.f.input_dim:
            raise ShapeError("forward/reverse dimensions do not chain")
        if self.x_norm is None:
            self.x_norm = (np.zeros(self.f.input_dim), np.ones(self.f.input_dim))
        if self.y_norm is None:
            self.y_norm = (np.zeros(self.f.output_dim), np.ones(self.f.output_dim))
        self.x_norm = (np.asarray(self.x_norm[0], float), np.asarray(self.x_norm[1], float))
        self.y_norm = (np.asarray(self.y_norm[0], float), np.asarray(self.y_norm[1], float))
        if np.any(self.x_norm[1] <= 0) or np.any(self.y_norm[1] <= 0):
            raise ValueError("normalization stds must be strictly positive")

    @property
    def d_in(self):
        return self.f.input_dim

    @property
    def d_out(self):
        return self.f.output_dim

    def normalize_x(self, x):
        return (np.asarray(x, float) - self.x_norm[0]) / self.x_norm[1]

    def denormalize_x(self, x):
        return np.asarray(x, float) * self.x_norm[1] + self.x_norm[0]

    def normalize_y(self, y):
        return (np.asarray(y, float) - self.y_norm[0]) / self.y_norm[1]

    def denormalize_y(self, y):
        return np.asarray(y, float) * self.y_norm[1] + self.y_norm[0]

    def copy(self):
        return Deceptron(
            self.f.copy(), self.g.copy(),
            (self.x_norm[0].copy(), self.x_norm[1].copy()),
            (self.y_norm[0].copy(), self.y_norm[1].copy()),
            dict(self.meta),
        )


def jcp_loss(dec, x_batch, probes):
    """Mean composition-defect loss over a batch, with parameter gradients.

    Returns (loss, grads_f, grads_g) where the loss is the mean over batch
    points and probes of ||J_g(f(x)) J_f(x) xi - xi||^2. Probes are shared
    across the batch.
    """
    X = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    if X.shape[1] != dec.d_in:
        raise ShapeError("batch latent dimension mismatch")
    Xi = sample_probes(probes, dec.d_in)
    k = Xi.shape[0]
    n = X.shape[0]
    X_rep = np.repeat(X, k, axis=0)
    Xi_rep = np.tile(Xi, (n, 1))
    return nets.jcp_batch(dec.f, dec.g, X_rep, Xi_rep)


def rjcp(dec, x, probes):
    """Runtime composition-defect diagnostic at a single point (no gradients).

    Identical math to the training penalty: probe mean of
    ||J_g(f(x)) J_f(x) xi - xi||^2.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dec.d_in,):
        raise ShapeError(f"x has shape {x.shape}, expected ({dec.d_in},)")
    Xi = sample_probes(probes, dec.d_in)
    X = np.repeat(x[None, :], Xi.shape[0], axis=0)
    T = nets.composition_tangent(dec.f, dec.g, X, Xi)
    R = T - Xi
    return float(np.mean(np.sum(R * R, axis=1)))


def rjcp_batch_mean(dec, X, probes):
    """Mean runtime diagnostic over rows of X (shared probes)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return float(np.mean([rjcp(dec, x, probes) for x in X]))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def deceptron_to_dict(dec):
    return {
        "f": nets.net_to_dict(dec.f),
        "g": nets.net_to_dict(dec.g),
        "x_norm": {"mean": dec.x_norm[0].tolist(), "std": dec.x_norm[1].tolist()},
        "y_norm": {"mean": dec.y_norm[0].tolist(), "std": dec.y_norm[1].tolist()},
        "meta": dec.meta,
    }


def deceptron_from_dict(d):
    return Deceptron(
        nets.net_from_dict(d["f"]),
        nets.net_from_dict(d["g"]),
        (np.array(d["x_norm"]["mean"]), np.array(d["x_norm"]["std"])),
        (np.array(d["y_norm"]["mean"]), np.array(d["y_norm"]["std"])),
        d.get("meta", {}),
    )


def save_deceptron(dec, path):
    with open(path, "w") as fh:
        json.dump(deceptron_to_dict(dec), fh)


def load_deceptron(path):
    with open(path) as fh:
        return deceptron_from_dict(json.load(fh))
