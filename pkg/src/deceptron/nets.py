"""Minimal dense-network engine with exact JVP/VJP and nested differentiation.

Networks are plain chains of affine layers followed by smooth activations
(identity, tanh, softplus). All activations are C^2, which is required for
differentiating through tangent-propagated quantities (the composition
penalty needs d/dparams of a JVP). Everything runs in float64.

Internally all passes are batched with samples as rows; the public
vector-level API wraps single rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Input dimensions do not match the network."""


class NumericOverflowError(ArithmeticError):
    """A non-finite value appeared during evaluation."""


ACTIVATIONS = ("identity", "tanh", "softplus")


def _act(name, z):
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "softplus":
        return np.where(z > 30.0, z, np.log1p(np.exp(np.minimum(z, 30.0))))
    raise ValueError(f"unknown activation {name!r}")


def _act_d(name, z):
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "softplus":
        return expit(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_dd(name, z):
    if name == "identity":
        return np.zeros_like(z)
    if name == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    if name == "softplus":
        s = expit(z)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: str = "identity"

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise ShapeError("layer weight/bias shapes inconsistent")
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")


@dataclass
class DenseNet:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.w.shape[0] != nxt.w.shape[1]:
                raise ShapeError("adjacent layer dimensions do not chain")
        for lay in self.layers:
            if not (np.isfinite(lay.w).all() and np.isfinite(lay.b).all()):
                raise NumericOverflowError("non-finite network parameters")

    @property
    def input_dim(self):
        return self.layers[0].w.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].w.shape[0]

    def params(self):
        """Flat list of parameter arrays: [w0, b0, w1, b1, ...] (views)."""
        out = []
        for lay in self.layers:
            out.append(lay.w)
            out.append(lay.b)
        return out

    def set_params(self, arrays):
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers):
            raise ShapeError("parameter list length mismatch")
        for i, lay in enumerate(self.layers):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != lay.w.shape or b.shape != lay.b.shape:
                raise ShapeError("parameter shape mismatch")
            lay.w = np.asarray(w, dtype=np.float64)
            lay.b = np.asarray(b, dtype=np.float64)

    def copy(self):
        return DenseNet([Layer(l.w.copy(), l.b.copy(), l.act) for l in self.layers])


def init_dense(dims, acts=None, seed=0, scale=1.0):
    """Glorot-initialized network: dims = [d0, d1, ..., dL]."""
    rng = np.random.default_rng(seed)
    n = len(dims) - 1
    if acts is None:
        acts = ["tanh"] * (n - 1) + ["identity"]
    layers = []
    for i in range(n):
        fan_in, fan_out = dims[i], dims[i + 1]
        lim = scale * np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append(Layer(w, b, acts[i]))
    return DenseNet(layers)


# ---------------------------------------------------------------------------
# batched primitives (rows = samples)
# ---------------------------------------------------------------------------

def forward_batch(net, A):
    """Evaluate the network on rows of A, shape (n, input_dim)."""
    for lay in net.layers:
        A = _act(lay.act, A @ lay.w.T + lay.b)
    return A


def forward_cache(net, A):
    """Forward pass keeping per-layer (input, pre-activation) for backprop."""
    cache = []
    for lay in net.layers:
        Z = A @ lay.w.T + lay.b
        cache.append((A, Z))
        A = _act(lay.act, Z)
    return A, cache


def backprop_input(net, cache, U):
    """Adjoint of forward_batch w.r.t. the input only: returns J^T u per row."""
    for lay, (_, Z) in zip(reversed(net.layers), reversed(cache)):
        U = (U * _act_d(lay.act, Z)) @ lay.w
    return U


def backprop_params(net, cache, U):
    """Adjoint w.r.t. inputs and parameters.

    Returns (input adjoint, grads) where grads matches net.params() layout.
    """
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        lay = net.layers[i]
        A, Z = cache[i]
        Zbar = U * _act_d(lay.act, Z)
        grads[2 * i] = Zbar.T @ A
        grads[2 * i + 1] = Zbar.sum(axis=0)
        U = Zbar @ lay.w
    return U, grads


def tangent_batch(net, A, T):
    """Propagate (primal, tangent) rows; returns (output, output tangent)."""
    for lay in net.layers:
        Z = A @ lay.w.T + lay.b
        TZ = T @ lay.w.T
        d = _act_d(lay.act, Z)
        A = _act(lay.act, Z)
        T = d * TZ
    return A, T


def tangent_cache(net, A, T):
    """Tangent-augmented forward pass keeping state for the nested backward."""
    cache = []
    for lay in net.layers:
        Z = A @ lay.w.T + lay.b
        TZ = T @ lay.w.T
        cache.append((A, T, Z, TZ))
        A = _act(lay.act, Z)
        T = _act_d(lay.act, Z) * TZ
    return A, T, cache


def tangent_backprop(net, cache, Abar, Tbar):
    """Reverse sweep through a tangent-augmented forward pass.

    Differentiates both the primal and tangent outputs w.r.t. inputs,
    input tangents, and parameters. Needs second derivatives of the
    activations, which is why they are restricted to C^2 functions.
    """
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        lay = net.layers[i]
        A, T, Z, TZ = cache[i]
        d = _act_d(lay.act, Z)
        dd = _act_dd(lay.act, Z)
        Zbar = Abar * d + Tbar * dd * TZ
        TZbar = Tbar * d
        grads[2 * i] = Zbar.T @ A + TZbar.T @ T
        grads[2 * i + 1] = Zbar.sum(axis=0)
        Abar = Zbar @ lay.w
        Tbar = TZbar @ lay.w
    return Abar, Tbar, grads


# ---------------------------------------------------------------------------
# vector-level API
# ---------------------------------------------------------------------------

def _check_input(net, x, dim, what="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ShapeError(f"{what} has shape {x.shape}, expected ({dim},)")
    if not np.isfinite(x).all():
        raise NumericOverflowError(f"non-finite {what}")
    return x


def evaluate(net, x):
    """Apply the layer chain to a single vector."""
    x = _check_input(net, x, net.input_dim)
    y = forward_batch(net, x[None, :])[0]
    if not np.isfinite(y).all():
        raise NumericOverflowError("non-finite network output")
    return y


def jvp(net, x, v):
    """Exact Jacobian-vector product by tangent propagation.

    Returns (y, t) with y = net(x) and t = J(x) v. No finite differences.
    """
    x = _check_input(net, x, net.input_dim)
    v = _check_input(net, v, net.input_dim, "tangent")
    Y, T = tangent_batch(net, x[None, :], v[None, :])
    if not (np.isfinite(Y).all() and np.isfinite(T).all()):
        raise NumericOverflowError("non-finite jvp result")
    return Y[0], T[0]


def vjp(net, x, u):
    """Exact vector-Jacobian product by reverse accumulation.

    Returns (y, w) with y = net(x) and w = J(x)^T u.
    """
    x = _check_input(net, x, net.input_dim)
    u = _check_input(net, u, net.output_dim, "cotangent")
    Y, cache = forward_cache(net, x[None, :])
    W = backprop_input(net, cache, u[None, :])
    if not (np.isfinite(Y).all() and np.isfinite(W).all()):
        raise NumericOverflowError("non-finite vjp result")
    return Y[0], W[0]


def grad_through_tangent(f, g, x, xi):
    """Probe loss ||J_g(f(x)) J_f(x) xi - xi||^2 and its parameter gradients.

    The loss is computed by pushing the tangent xi through f then g; the
    backward sweep differentiates the tangent-augmented passes of both nets,
    giving exact gradients w.r.t. every weight and bias.
    """
    x = _check_input(f, x, f.input_dim)
    xi = _check_input(f, xi, f.input_dim, "probe")
    if f.output_dim != g.input_dim or g.output_dim != f.input_dim:
        raise ShapeError("f/g dimensions do not chain into a round trip")
    loss, grads_f, grads_g = jcp_batch(f, g, x[None, :], xi[None, :])
    return loss, grads_f, grads_g


def jcp_batch(f, g, X, Xi):
    """Batched composition-defect loss with exact parameter gradients.

    Rows of X and Xi pair points with probes. Returns the mean over rows of
    ||J_g(f(x)) J_f(x) xi - xi||^2 plus gradient lists for f and g.
    """
    n = X.shape[0]
    Yf, Tf, cache_f = tangent_cache(f, X, Xi)
    Yg, Tg, cache_g = tangent_cache(g, Yf, Tf)
    R = Tg - Xi
    loss = float(np.sum(R * R) / n)
    # d loss / d Tg = 2 R / n; primal output of g is unused by the loss
    Tbar = 2.0 * R / n
    Abar = np.zeros_like(Yg)
    Abar_f, Tbar_f, grads_g = tangent_backprop(g, cache_g, Abar, Tbar)
    _, _, grads_f = tangent_backprop(f, cache_f, Abar_f, Tbar_f)
    return loss, grads_f, grads_g


def composition_tangent(f, g, X, Xi):
    """Tangent of g∘f: returns J_g(f(x)) J_f(x) xi per row, no gradients."""
    Yf, Tf = tangent_batch(f, X, Xi)
    _, Tg = tangent_batch(g, Yf, Tf)
    return Tg


def finite_diff_jacobian(net, x, h=1e-5):
    """Central-difference Jacobian, used as a test oracle only."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = _check_input(net, x, net.input_dim)
    cols = []
    for j in range(net.input_dim):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((evaluate(net, x + e) - evaluate(net, x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def net_to_dict(net):
    return {
        "layers": [
            {"w": lay.w.tolist(), "b": lay.b.tolist(), "act": lay.act}
            for lay in net.layers
        ]
    }


def net_from_dict(d):
    return DenseNet(
        [Layer(np.array(l["w"]), np.array(l["b"]), l["act"]) for l in d["layers"]]
    )


def save_net(net, path):
    with open(path, "w") as fh:
        json.dump(net_to_dict(net), fh)


def load_net(path):
    with open(path) as fh:
        return net_from_dict(json.load(fh))
