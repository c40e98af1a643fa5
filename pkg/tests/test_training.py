"""Optimizer steps, loss gradients, and the staged training protocol."""

from dataclasses import replace

import numpy as np
import pytest

from deceptron import nets, problems, training
from deceptron.core import Deceptron, ProbeConfig
from deceptron.training import (AdamState, TrainConfig, adam_step, cosine_lr,
                                TrainingDivergedError, train_three_stage,
                                training_loss)


def test_adam_first_step_oracle():
    # closed-form first step: p - lr * g / (|g| + eps * sqrt(1 - beta2))
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -0.25])
    state = AdamState.for_params([p])
    new, state = adam_step([p], [g], state, lr=0.1, clip_norm=0.0)
    # after bias correction mhat = g and vhat = g^2 on the first step
    expected = p - 0.1 * g / (np.abs(g) + state.eps)
    assert np.allclose(new[0], expected, atol=1e-15)
    assert state.step == 1


def test_adam_first_step_magnitude_near_lr():
    p = np.zeros(3)
    g = np.array([10.0, -0.01, 3.0])
    new, _ = adam_step([p], [g], AdamState.for_params([p]), lr=0.1,
                       clip_norm=0.0)
    # sign-sgd-like first step regardless of gradient scale
    assert np.allclose(np.abs(new[0]), 0.1, rtol=1e-5)
    assert np.allclose(np.sign(new[0]), -np.sign(g))


def test_adam_global_clip_equals_prescaled_gradients():
    rng = np.random.default_rng(0)
    p1, p2 = rng.standard_normal(4), rng.standard_normal((2, 3))
    g1, g2 = 10 * rng.standard_normal(4), 10 * rng.standard_normal((2, 3))
    gnorm = np.sqrt(np.sum(g1 ** 2) + np.sum(g2 ** 2))
    clip = 5.0
    assert gnorm > clip
    a, _ = adam_step([p1, p2], [g1, g2],
                     AdamState.for_params([p1, p2]), lr=0.01, clip_norm=clip)
    scale = clip / gnorm
    b, _ = adam_step([p1, p2], [g1 * scale, g2 * scale],
                     AdamState.for_params([p1, p2]), lr=0.01, clip_norm=0.0)
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-15)


def test_adam_no_clip_below_threshold():
    p = np.zeros(2)
    g = np.array([0.3, 0.4])  # norm 0.5 < 5
    a, _ = adam_step([p], [g], AdamState.for_params([p]), lr=0.01, clip_norm=5.0)
    b, _ = adam_step([p], [g], AdamState.for_params([p]), lr=0.01, clip_norm=0.0)
    assert np.allclose(a[0], b[0], atol=1e-16)


def test_adam_decoupled_weight_decay():
    p = np.array([2.0])
    g = np.array([0.0])
    # zero gradient: the only change is the multiplicative shrink
    new, _ = adam_step([p], [g], AdamState.for_params([p]), lr=0.1,
                       weight_decay=0.5, clip_norm=0.0)
    assert np.allclose(new[0], 2.0 * (1 - 0.1 * 0.5), atol=1e-15)


def test_adam_rejects_nonfinite_gradient():
    p = np.zeros(2)
    with pytest.raises(TrainingDivergedError):
        adam_step([p], [np.array([1.0, np.nan])],
                  AdamState.for_params([p]), lr=0.1)


def test_cosine_annealing_schedule():
    assert cosine_lr(1.0, 0, 100) == 1.0
    assert abs(cosine_lr(1.0, 50, 100) - 0.5) <= 1e-15
    assert abs(cosine_lr(1.0, 100, 100)) <= 1e-15
    # monotone decreasing over the stage
    vals = [cosine_lr(1.0, e, 100) for e in range(101)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def tiny_dec(seed=0):
    f = nets.init_dense([3, 5, 4], seed=seed)
    g = nets.init_dense([4, 5, 3], seed=seed + 1)
    return Deceptron(f, g)


def _loss_only(dec, batch, yt, cfg):
    return training_loss(dec, batch, yt, cfg)[0]


@pytest.mark.parametrize("cfg_kwargs", [
    dict(lambda_task=1.0, lambda_rec=0.0, lambda_cyc=0.0, lambda_jcp=0.0,
         weight_decay=0.0),
    dict(lambda_task=0.0, lambda_rec=1.0, lambda_cyc=0.0, lambda_jcp=0.0,
         weight_decay=0.0),
    dict(lambda_task=0.0, lambda_rec=0.0, lambda_cyc=0.7, lambda_jcp=0.0,
         weight_decay=0.0),
    dict(lambda_task=0.0, lambda_rec=0.0, lambda_cyc=0.0, lambda_jcp=0.9,
         weight_decay=0.0),
    dict(lambda_task=1.0, lambda_rec=0.8, lambda_cyc=0.3, lambda_jcp=0.5,
         weight_decay=1e-3),
])
def test_training_loss_gradients_finite_difference(cfg_kwargs):
    rng = np.random.default_rng(42)
    dec = tiny_dec()
    X = rng.standard_normal((4, 3))
    Y = rng.standard_normal((4, 4))
    Yt = rng.standard_normal((3, 4))
    cfg = TrainConfig(probe=ProbeConfig("rademacher", 3, (5, 6)), **cfg_kwargs)
    loss, comps, gf, gg = training_loss(dec, (X, Y), Yt, cfg)
    assert np.isfinite(loss)

    h = 1e-6
    for net, grads in ((dec.f, gf), (dec.g, gg)):
        for i, p in enumerate(net.params()):
            flat = p.ravel()
            picks = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for k in picks:
                old = flat[k]
                flat[k] = old + h
                lp = _loss_only(dec, (X, Y), Yt, cfg)
                flat[k] = old - h
                lm = _loss_only(dec, (X, Y), Yt, cfg)
                flat[k] = old
                fd = (lp - lm) / (2 * h)
                assert abs(fd - grads[i].ravel()[k]) <= 2e-5 * max(1, abs(fd))


def test_training_loss_stabilization_terms_gradients():
    rng = np.random.default_rng(43)
    dec = tiny_dec(seed=7)
    X = rng.standard_normal((3, 3))
    Y = rng.standard_normal((3, 4))
    cfg = TrainConfig(lambda_task=0.0, lambda_rec=0.0, lambda_cyc=0.0,
                      lambda_jcp=0.0, weight_decay=0.0,
                      lambda_bias=0.4, lambda_comp=0.6,
                      x_anchor=rng.standard_normal((1, 3)),
                      pc_probe=rng.standard_normal(3))
    loss, comps, gf, gg = training_loss(dec, (X, Y), None, cfg)
    assert comps["bias"] > 0 and comps["comp"] > 0
    h = 1e-6
    for net, grads in ((dec.f, gf), (dec.g, gg)):
        for i, p in enumerate(net.params()):
            flat = p.ravel()
            picks = rng.choice(flat.size, size=min(3, flat.size), replace=False)
            for k in picks:
                old = flat[k]
                flat[k] = old + h
                lp = _loss_only(dec, (X, Y), None, cfg)
                flat[k] = old - h
                lm = _loss_only(dec, (X, Y), None, cfg)
                flat[k] = old
                fd = (lp - lm) / (2 * h)
                assert abs(fd - grads[i].ravel()[k]) <= 2e-5 * max(1, abs(fd))


def test_training_loss_rejects_empty_batch():
    dec = tiny_dec()
    with pytest.raises(ValueError):
        training_loss(dec, (np.zeros((0, 3)), np.zeros((0, 4))), None,
                      TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_jcp=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=(0.0, 1e-3, 1e-3))


@pytest.fixture(scope="module")
def linear_run():
    prob = problems.make_problem("linear")
    ds = problems.make_dataset(prob, 192, 48, 16, seed=0)
    cfg = replace(training.default_train_config("linear", seed=0),
                  epochs=(25, 15, 15))
    plus, minus, history = train_three_stage(ds, cfg)
    return prob, ds, plus, minus, history


def test_forks_share_frozen_forward_net(linear_run):
    _, _, plus, minus, _ = linear_run
    for p, q in zip(plus.f.params(), minus.f.params()):
        assert np.array_equal(p, q)
    # reverse nets must differ between forks
    assert any(not np.array_equal(p, q)
               for p, q in zip(plus.g.params(), minus.g.params()))


def test_history_covers_all_stages(linear_run):
    _, _, _, _, history = linear_run
    stages = {(row["stage"], row["variant"]) for row in history}
    assert (1, "shared") in stages and (2, "shared") in stages
    assert (3, "+jcp") in stages and (3, "-jcp") in stages
    # losses recorded and finite
    assert all(np.isfinite(row["loss"]) for row in history)


def test_stage1_reduces_task_loss(linear_run):
    _, _, _, _, history = linear_run
    s1 = [row["task"] for row in history if row["stage"] == 1]
    assert s1[-1] < 0.5 * s1[0]


def test_penalty_fork_has_lower_validation_rjcp(linear_run):
    _, ds, plus, minus, _ = linear_run
    rj_plus = training.validation_rjcp(plus, ds.val_xn, seed=0)
    rj_minus = training.validation_rjcp(minus, ds.val_xn, seed=0)
    assert rj_plus < rj_minus


def test_train_three_stage_deterministic():
    prob = problems.make_problem("linear")
    ds = problems.make_dataset(prob, 96, 24, 8, seed=1)
    cfg = replace(training.default_train_config("linear", seed=3),
                  epochs=(4, 3, 3))
    a_plus, a_minus, _ = train_three_stage(ds, cfg)
    b_plus, b_minus, _ = train_three_stage(ds, cfg)
    for p, q in zip(a_plus.g.params(), b_plus.g.params()):
        assert np.array_equal(p, q)
    for p, q in zip(a_minus.g.params(), b_minus.g.params()):
        assert np.array_equal(p, q)


def test_default_train_config_presets():
    cfg = training.default_train_config("heat2d")
    assert cfg.epochs == (160, 120, 140)
    assert cfg.lr == (2e-3, 2e-3, 1e-3)
    assert cfg.lambda_jcp == 0.5
    cfg1 = training.default_train_config("heat1d")
    assert cfg1.lambda_jcp == 0.0 and cfg1.lambda_comp > 0
    with pytest.raises(ValueError):
        training.default_train_config("nope")
