"""Scikit-learn style facade over the staged trainer and inverse solver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import dipg, nets
from .problems import Dataset
from .training import TrainConfig, train_three_stage


class DeceptronEstimator(BaseEstimator):
    """Bidirectional surrogate wrapped as an estimator.

    ``fit(X, Y)`` learns a forward surrogate f: X -> Y and a reverse net
    g: Y -> X with the three-stage protocol. ``predict(X)`` evaluates the
    forward surrogate; ``inverse_predict(Y)`` runs the safeguarded inverse
    solver from the reverse warm start. Both forks survive fitting; the
    penalty-trained one is used by default.
    """

    def __init__(self, epochs=(40, 30, 30), lr=(2e-3, 2e-3, 1e-3),
                 lambda_cyc=0.15, lambda_jcp=0.5, weight_decay=1e-6,
                 f_hidden=(64,), g_hidden=(64,), batch_size=64,
                 val_fraction=0.15, seed=0, solver_max_iters=80,
                 solver_tol=0.30, use_jcp_fork=True, verbose=False):
        self.epochs = epochs
        self.lr = lr
        self.lambda_cyc = lambda_cyc
        self.lambda_jcp = lambda_jcp
        self.weight_decay = weight_decay
        self.f_hidden = f_hidden
        self.g_hidden = g_hidden
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.seed = seed
        self.solver_max_iters = solver_max_iters
        self.solver_tol = solver_tol
        self.use_jcp_fork = use_jcp_fork
        self.verbose = verbose

    def _dataset_from_arrays(self, X, Y):
        n = X.shape[0]
        n_val = max(1, int(round(self.val_fraction * n)))
        if n - n_val < 1:
            raise ValueError("not enough samples for a train/val split")
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(n)
        val_idx, train_idx = order[:n_val], order[n_val:]
        tx, ty = X[train_idx], Y[train_idx]
        x_norm = (tx.mean(axis=0), np.maximum(tx.std(axis=0), 1e-8))
        y_norm = (ty.mean(axis=0), np.maximum(ty.std(axis=0), 1e-8))
        return Dataset(problem="arrays",
                       train_x=tx, train_y=ty,
                       val_x=X[val_idx], val_y=Y[val_idx],
                       test_x=X[val_idx][:1], test_y=Y[val_idx][:1],
                       x_norm=x_norm, y_norm=y_norm)

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        dataset = self._dataset_from_arrays(X, Y)
        cfg = TrainConfig(epochs=tuple(self.epochs), lr=tuple(self.lr),
                          lambda_cyc=self.lambda_cyc,
                          lambda_jcp=self.lambda_jcp,
                          weight_decay=self.weight_decay,
                          batch_size=self.batch_size, seed=self.seed,
                          f_hidden=tuple(self.f_hidden),
                          g_hidden=tuple(self.g_hidden))
        plus, minus, history = train_three_stage(dataset, cfg,
                                                 verbose=self.verbose)
        self.model_plus_ = plus
        self.model_minus_ = minus
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        return self

    @property
    def _model(self):
        return self.model_plus_ if self.use_jcp_fork else self.model_minus_

    def predict(self, X):
        """Forward surrogate prediction in raw coordinates."""
        check_is_fitted(self, "model_plus_")
        X = check_array(X, dtype=np.float64)
        dec = self._model
        Yn = nets.forward_batch(dec.f, dec.normalize_x(X))
        return dec.denormalize_y(Yn)

    def inverse_predict(self, Y, return_traces=False):
        """Solve x for each target row y via the safeguarded inverse solver."""
        check_is_fitted(self, "model_plus_")
        Y = check_array(Y, dtype=np.float64)
        dec = self._model
        cfg = dipg.DipgConfig(max_iters=self.solver_max_iters,
                              stop_rel_tol=self.solver_tol)
        xs, traces = [], []
        for i, y in enumerate(Y):
            yn = dec.normalize_y(y)
            x0 = dipg.warm_start(dec, yn, cfg)
            trace = dipg.solve(dec, yn, x0, cfg, run_seed=(self.seed, i),
                               compute_rjcp=False)
            xs.append(dec.denormalize_x(trace.final_x))
            traces.append(trace)
        X = np.array(xs)
        return (X, traces) if return_traces else X

    def score(self, X, Y):
        """Negative forward RMSE (higher is better, sklearn convention)."""
        pred = self.predict(X)
        return -float(np.sqrt(np.mean((pred - np.asarray(Y, float)) ** 2)))
