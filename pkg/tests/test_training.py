import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from khorder.models import ModelSpec, build, evaluate
from khorder.problems import get_problem, sample
from khorder.models import make_rng
from khorder.training import (
    Adam,
    TrainConfig,
    TrainingAborted,
    anneal_beta,
    fit_loss,
    fit_loss_and_grad,
    learning_rate,
    pde_loss,
    train,
)


def test_learning_rate_schedule():
    cfg = TrainConfig(lr0=4e-3, decay=0.9, decay_every=1000)
    assert learning_rate(cfg, 0) == 4e-3
    assert learning_rate(cfg, 999) == 4e-3
    assert learning_rate(cfg, 1000) == pytest.approx(3.6e-3)
    assert learning_rate(cfg, 2500) == pytest.approx(4e-3 * 0.81)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-4, 1e-1), st.floats(0.5, 1.0), st.integers(1, 500), st.integers(0, 5000))
def test_learning_rate_non_increasing(lr0, decay, every, epoch):
    cfg = TrainConfig(lr0=lr0, decay=decay, decay_every=every)
    assert learning_rate(cfg, epoch + 1) <= learning_rate(cfg, epoch)


def test_config_validation():
    for bad in ({"epochs": -1}, {"beta_mode": "auto"}, {"lr0": 0}, {"decay": 1.5}, {"n_f": 0}, {"anneal_alpha": 2}, {"threads": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_adam_first_step_is_lr_sign():
    adam = Adam([(3,)])
    p = np.zeros(3)
    out = adam.step([p], [np.array([2.0, -0.5, 0.0])], 0.1)[0]
    np.testing.assert_allclose(out, [-0.1, 0.1, 0.0], atol=1e-6)


def test_adam_minimises_quadratic():
    adam = Adam([(2,)])
    x = [np.array([3.0, -2.0])]
    for _ in range(2000):
        x = adam.step(x, [2 * x[0]], 0.05)
    assert np.linalg.norm(x[0]) < 1e-2


def test_anneal_beta():
    assert anneal_beta(1.0, 10.0, 2.0, 0.1) == pytest.approx(0.9 + 0.1 * 5.0)
    assert anneal_beta(3.0, 10.0, 0.0, 0.1) == 3.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(0, 100), st.floats(1e-3, 100), st.floats(0, 1))
def test_anneal_beta_is_convex_blend(beta, fmax, bmean, alpha):
    out = anneal_beta(beta, fmax, bmean, alpha)
    target = fmax / bmean * beta
    assert min(beta, target) - 1e-9 <= out <= max(beta, target) + 1e-9


def test_fit_loss_and_grad_consistent():
    spec = ModelSpec("PINN", d=2, L=1, W=4)
    params = build(spec)
    X = np.random.default_rng(0).random((9, 2))
    y = np.ones(9)
    loss, grads = fit_loss_and_grad(spec, params, X, y, chunk=4)
    assert loss == pytest.approx(fit_loss(spec, params, X, y), rel=1e-12)
    with pytest.raises(ValueError):
        fit_loss(spec, params, X, y[:3])


def test_chunks_and_threads_do_not_change_the_loss():
    spec = ModelSpec("KHOrderDNN", d=2, p=3, hd=1, hw=3, gd=1, gw=4)
    params = build(spec)
    X = np.random.default_rng(1).random((50, 2))
    y = X.sum(axis=1)
    a = fit_loss_and_grad(spec, params, X, y, chunk=7, threads=1)
    b = fit_loss_and_grad(spec, params, X, y, chunk=7, threads=3)
    assert a[0] == b[0]
    assert all(np.array_equal(u, v) for u, v in zip(a[1], b[1]))


def test_pde_loss_matches_definition():
    pb = get_problem("poisson2d_sin8")
    spec = ModelSpec("PINN", d=2, L=1, W=4)
    params = build(spec)
    batch = sample(pb, 20, 8, make_rng(0, 1))
    total, lf, lb = pde_loss(spec, params, pb, batch, beta=2.0)
    assert lb == pytest.approx(np.mean((evaluate(spec, params, batch.boundary) - batch.g) ** 2))
    assert total == pytest.approx(lf + 2.0 * lb)


def test_fit_training_reduces_error_and_is_deterministic():
    pb = get_problem("fit2d_eq41", jmax=1)
    spec = ModelSpec("KHOrderDNN", d=2, p=3, activation="relu", hd=1, hw=5, gd=1, gw=10)
    cfg = TrainConfig(epochs=60, n_f=300, eval_every=20)
    _, rec = train(spec, pb, cfg)
    _, rec2 = train(spec, pb, cfg)
    assert rec.rel == rec2.rel or all(
        (math.isnan(a) and math.isnan(b)) or a == b for a, b in zip(rec.rel, rec2.rel)
    )
    ev = rec.evaluations
    assert [e for e, _ in ev] == [20, 40, 60]
    assert rec.min_rel <= ev[0][1]
    assert rec.final_rel == ev[-1][1]


def test_pde_training_runs_and_logs_beta(tmp_path):
    pb = get_problem("poisson_tensor_dD", d=2)
    spec = ModelSpec("PINN", d=2, L=1, W=6)
    cfg = TrainConfig(epochs=12, n_f=64, n_b=16, eval_every=6, anneal_every=5)
    _, rec = train(spec, pb, cfg)
    assert len(rec.epoch) == 12 and rec.beta[0] != 1.0
    path = rec.write_csv(tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,L_f,L_b,beta,lr,REL" and len(lines) == 13


def test_fixed_beta_stays_fixed():
    pb = get_problem("poisson_tensor_dD", d=2)
    spec = ModelSpec("PINN", d=2, L=1, W=6)
    _, rec = train(spec, pb, TrainConfig(epochs=5, n_f=32, n_b=8, beta_mode="fixed", beta=3.0))
    assert set(rec.beta) == {3.0}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_abort_on_non_finite():
    pb = get_problem("fit2d_eq41", jmax=1)
    spec = ModelSpec("PINN", d=2, L=1, W=4)
    with pytest.raises(TrainingAborted) as info:
        train(spec, pb, TrainConfig(epochs=50, n_f=16, lr0=1e200))
    assert info.value.record.aborted
    assert np.all(np.isfinite(info.value.params.flat()))


def test_fixed_data_mode():
    spec = ModelSpec("PINN", d=1, L=1, W=8)
    X = np.linspace(0, 1, 32)[:, None]
    y = 2 * X[:, 0]
    params, rec = train(spec, None, TrainConfig(epochs=300, n_f=32, lr0=1e-2), data=(X, y))
    assert rec.loss_f[-1] < rec.loss_f[0] / 10
    assert math.isnan(rec.min_rel)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        train(ModelSpec("PINN", d=3, L=1, W=2), get_problem("fit2d_eq41"), TrainConfig(epochs=1))


def test_adam_three_steps_by_hand():
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
    adam = Adam([(2,)], b1, b2, eps)
    x = np.array([1.0, -2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    ref = x.copy()
    for t in range(1, 4):
        g = np.array([2 * ref[0], 4 * ref[1] ** 3])
        gx = np.array([2 * x[0], 4 * x[1] ** 3])
        x = adam.step([x], [gx], lr)[0]
        for i in range(2):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            ref[i] = ref[i] - lr * (m[i] / (1 - b1**t)) / (math.sqrt(v[i] / (1 - b2**t)) + eps)
        np.testing.assert_allclose(x, ref, atol=1e-12, rtol=0)


def test_zero_epochs_returns_initial_params():
    spec = ModelSpec("PINN", d=2, L=1, W=3)
    params, rec = train(spec, get_problem("fit2d_eq41"), TrainConfig(epochs=0, n_f=8))
    assert np.array_equal(params.flat(), build(spec).flat()) and rec.epoch == []


def test_linear_model_reaches_least_squares_line():
    spec = ModelSpec("PINN", d=1, L=1, W=1, activation="identity")
    X = np.linspace(0, 1, 21)[:, None]
    y = X[:, 0] ** 2
    params, _ = train(spec, None, TrainConfig(epochs=2000, n_f=21, lr0=4e-2), data=(X, y))
    slope, intercept = np.polyfit(X[:, 0], y, 1)
    np.testing.assert_allclose(evaluate(spec, params, X), slope * X[:, 0] + intercept, atol=1e-3)


def test_consecutive_batches_differ():
    pb = get_problem("poisson2d_sin8")
    rng = make_rng(0, 1)
    a, b = sample(pb, 10, 4, rng), sample(pb, 10, 4, rng)
    assert not np.array_equal(a.interior, b.interior)
    assert not np.array_equal(a.boundary, b.boundary)


def test_constant_fit_loss():
    spec = ModelSpec("PINN", d=2, L=1, W=2)
    params = build(spec)
    zero = type(params)(params.inner, tuple(type(l)(np.zeros_like(l.weight), np.full_like(l.bias, 0.5)) for l in params.outer))
    X = np.random.default_rng(0).random((7, 2))
    assert fit_loss(spec, zero, X, np.full(7, 2.0)) == pytest.approx(2.25)


def test_pde_loss_trivial_cases():
    pb = get_problem("poisson2d_sin8")
    spec = ModelSpec("PINN", d=2, L=1, W=4)
    params = build(spec, seed=2)
    batch = sample(pb, 16, 8, make_rng(1, 1))
    total, lf, _ = pde_loss(spec, params, pb, batch, beta=0.0)
    assert total == lf
    with pytest.raises(ValueError):
        pde_loss(spec, params, pb, type(batch)(batch.interior[:0], batch.boundary, batch.f[:0], batch.g), 1.0)


def test_gradient_statistics_pooling():
    from khorder.training import _grad_stats

    gf = [np.array([[1.0, -4.0]]), np.array([9.0]), np.array([[2.0]]), np.array([0.0])]
    gb = [np.array([[1.0, 3.0]]), np.array([100.0]), np.array([[6.0]]), np.array([0.0])]
    # global: every entry, biases included
    assert _grad_stats(gf, gb, 2.0, "global") == (9.0, 2.0 * 110.0 / 5)
    # layerwise: weight matrices only, mean of per-layer means
    assert _grad_stats(gf, gb, 2.0, "layerwise") == (4.0, 2.0 * (2.0 + 6.0) / 2)
    with pytest.raises(ValueError):
        TrainConfig(anneal_stats="median")
