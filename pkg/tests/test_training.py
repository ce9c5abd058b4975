import math

import numpy as np
import pytest

from conftest import TINY_CFG
from rislab.errors import InfeasibleRequestError, NonFiniteError, ShapeMismatchError
from rislab.neural import LossParts
from rislab.schemas import TrainConfig
from rislab.training import adam_init, adam_step, clip_by_global_norm, fit, grid_search, split_loss, train


def test_adam_first_step_by_hand():
    params = {"w": np.array([0.0])}
    state = adam_init(params, lr=0.1)
    new, state = adam_step(params, {"w": np.array([1.0])}, state)
    assert new["w"][0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)
    assert state.step == 1
    assert params["w"][0] == 0.0


def test_adam_zero_gradient_keeps_parameters_and_decays_moments():
    params = {"w": np.array([1.0, -2.0])}
    fresh = adam_init(params)
    untouched, _ = adam_step(params, {"w": np.zeros(2)}, fresh)
    assert np.array_equal(untouched["w"], params["w"])

    _, state = adam_step(params, {"w": np.array([0.5, 0.5])}, fresh)
    m_before = state.m["w"].copy()
    _, state = adam_step(params, {"w": np.zeros(2)}, state)
    assert np.all(np.abs(state.m["w"]) < np.abs(m_before))


def _scalar_adam(theta, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    theta = [float(v) for v in theta]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    for t, g in enumerate(grads_seq, start=1):
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for j in range(len(theta)):
            gj = float(g[j])
            m[j] = b1 * m[j] + (1.0 - b1) * gj
            v[j] = b2 * v[j] + (1.0 - b2) * (gj * gj)
            m_hat = m[j] / c1
            v_hat = v[j] / c2
            theta[j] = theta[j] - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def test_adam_matches_scalar_loop_bitwise():
    rng = np.random.default_rng(0)
    theta0 = rng.normal(size=5)
    grads_seq = rng.normal(size=(1000, 5))
    params = {"w": theta0.copy()}
    state = adam_init(params, lr=1e-3)
    for g in grads_seq:
        params, state = adam_step(params, {"w": g}, state)
    assert params["w"].tolist() == _scalar_adam(theta0, grads_seq, 1e-3)


def test_adam_rejects_bad_gradients():
    params = {"w": np.zeros(2)}
    state = adam_init(params)
    with pytest.raises(NonFiniteError):
        adam_step(params, {"w": np.array([1.0, np.nan])}, state)
    with pytest.raises(ShapeMismatchError):
        adam_step(params, {"w": np.zeros(3)}, state)


def test_clip_by_global_norm():
    grads, norm = clip_by_global_norm({"a": np.array([3.0]), "b": np.array([4.0])}, 1.0)
    assert norm == 5.0
    assert grads["a"][0] == pytest.approx(0.6)
    assert grads["b"][0] == pytest.approx(0.8)
    same, _ = clip_by_global_norm({"a": np.array([0.1])}, None)
    assert same["a"][0] == 0.1


def _regression_problem(n: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + 0.01 * rng.normal(size=n)
    x_tr, y_tr, x_va, y_va = x[:80], y[:80], x[80:], y[80:]

    def batch_loss(p, idx):
        r = x_tr[idx] @ p["w"] - y_tr[idx]
        loss = float(np.mean(r * r))
        return LossParts(loss, loss, 0.0, 0.0), {"w": 2.0 * x_tr[idx].T @ r / len(idx)}

    def val_loss(p):
        r = x_va @ p["w"] - y_va
        loss = float(np.mean(r * r))
        return LossParts(loss, loss, 0.0, 0.0)

    return batch_loss, val_loss


def test_fit_improves_on_synthetic_regression():
    batch_loss, val_loss = _regression_problem()
    cfg = TrainConfig(epochs=30, batch_size=16, lr=0.05)
    result = fit({"w": np.zeros(3)}, 80, batch_loss, val_loss, cfg)
    assert len(result.history) == 30
    assert result.best_val.total < result.init_val.total
    assert result.best_val.total == min(r.val_loss for r in result.history)
    assert result.best_epoch == 1 + int(np.argmin([r.val_loss for r in result.history]))


def test_fit_with_zero_epochs_returns_initialization():
    batch_loss, val_loss = _regression_problem()
    start = {"w": np.array([0.3, 0.2, 0.1])}
    result = fit(start, 80, batch_loss, val_loss, TrainConfig(epochs=0))
    assert result.history == []
    assert result.best_epoch == 0
    assert np.array_equal(result.params["w"], start["w"])
    assert result.best_val == result.init_val == val_loss(start)


def test_fit_aborts_on_non_finite_loss():
    def batch_loss(p, idx):
        return LossParts(math.nan, math.nan, 0.0, 0.0), {"w": np.zeros(1)}

    def val_loss(p):
        return LossParts(1.0, 1.0, 0.0, 0.0)

    with pytest.raises(NonFiniteError, match="epoch 1 batch 0"):
        fit({"w": np.zeros(1)}, 4, batch_loss, val_loss, TrainConfig(epochs=1))


def test_fit_rejects_empty_training_split():
    batch_loss, val_loss = _regression_problem()
    with pytest.raises(InfeasibleRequestError):
        fit({"w": np.zeros(3)}, 0, batch_loss, val_loss, TrainConfig(epochs=1))


def test_trained_localizer_keeps_best_validation(tiny_trained):
    vals = [tiny_trained.init_val.total] + [r.val_loss for r in tiny_trained.history]
    assert tiny_trained.best_val.total == min(vals)
    assert len(tiny_trained.history) == TINY_CFG.epochs
    assert tiny_trained.stats is not None


def test_training_is_deterministic(tiny_splits, tiny_trained):
    train_split, val_split, _ = tiny_splits
    again = train(train_split, val_split, TINY_CFG)
    for name, value in tiny_trained.params.items():
        assert np.array_equal(value, again.params[name])
    assert [r.val_loss for r in again.history] == [r.val_loss for r in tiny_trained.history]


def test_class_head_beats_chance(tiny_splits):
    train_split, val_split, test_split = tiny_splits
    cfg = TINY_CFG.with_overrides({"epochs": 40, "lr": 3e-2, "alpha": 0.0})
    result = train(train_split, val_split, cfg)
    chance = 1.0 / train_split.header.k
    assert split_loss(result, train_split).accuracy > chance
    assert result.best_val.accuracy > chance
    assert split_loss(result, test_split).accuracy > chance
    assert all(0.0 <= r.val_accuracy <= 1.0 for r in result.history)


def test_split_loss_on_validation_matches_history(tiny_splits, tiny_trained):
    _, val_split, _ = tiny_splits
    again = split_loss(tiny_trained, val_split)
    assert again.total == pytest.approx(tiny_trained.best_val.total, rel=1e-12)
    assert again.accuracy == tiny_trained.best_val.accuracy


@pytest.mark.slow
def test_localizer_training_reduces_validation_loss(tiny_splits):
    train_split, val_split, _ = tiny_splits
    result = train(train_split, val_split, TINY_CFG.with_overrides({"epochs": 30}))
    assert result.best_val.total < result.init_val.total


def test_grid_search_ranks_and_prefers_no_regularization(tiny_splits):
    train_split, val_split, _ = tiny_splits
    base = TINY_CFG.with_overrides({"epochs": 2})
    grid = [{"alpha": 10.0}, {"alpha": 0.0}]
    result = grid_search(grid, train_split, val_split, base)
    assert len(result.rows) == 2
    assert [row.rank for row in result.rows] == [1, 2]
    by_index = {row.grid_index: row for row in result.rows}
    assert by_index[1].final_train_loss < by_index[0].final_train_loss
    assert result.best.alpha == 0.0


def test_grid_search_singleton_and_empty(tiny_splits):
    train_split, val_split, _ = tiny_splits
    base = TINY_CFG.with_overrides({"epochs": 1})
    result = grid_search([{"lr": 1e-3}], train_split, val_split, base)
    assert result.best == base.with_overrides({"lr": 1e-3})
    assert len(result.rows) == 1
    with pytest.raises(InfeasibleRequestError):
        grid_search([], train_split, val_split, base)
