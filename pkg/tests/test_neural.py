import math

import numpy as np
import pytest

from rislab.errors import DomainError, ShapeMismatchError
from rislab.neural import (
    PARAM_ORDER,
    CellWeights,
    LossSpec,
    baseline_loss_and_grads,
    bilstm_forward,
    class_accuracy,
    evaluate_loss,
    hybrid_loss,
    init_baseline,
    init_params,
    loss_and_grads,
    lstm_cell,
    model_forward,
    param_shapes,
    predict,
    softmax,
)
from rislab.schemas import BaselineDims, ModelDims

TINY_DIMS = ModelDims(n_features=6, n_classes=3, hidden=4, hidden2=4, embed_dim=3)


def _sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v))


@pytest.fixture
def tiny_model():
    rng = np.random.default_rng(0)
    params = init_params(TINY_DIMS, rng)
    # nonzero biases so every gradient path is exercised
    for name in ("fw.b", "bw.b", "l2.b", "coord.b", "cls.b"):
        params[name] = params[name] + rng.normal(0.0, 0.1, size=params[name].shape)
    x = rng.normal(size=(7, 5, 6))
    k = np.array([0, 1, 2, 1, 0, 2, 2])
    u = rng.normal(size=(7, 2))
    return params, x, k, u


def test_param_shapes_follow_dims():
    shapes = param_shapes(TINY_DIMS)
    assert tuple(shapes) == PARAM_ORDER
    assert shapes["fw.Wx"] == (6, 16)
    assert shapes["l2.Wx"] == (8, 16)
    assert shapes["coord.W"] == (7, 2)
    assert shapes["cls.W"] == (7, 3)


def test_init_sets_forget_bias_and_coord_bias():
    params = init_params(TINY_DIMS, np.random.default_rng(1), coord_bias=[2.0, 3.0])
    assert params["fw.b"][4:8].tolist() == [1.0] * 4
    assert params["fw.b"][:4].tolist() == [0.0] * 4
    assert params["coord.b"].tolist() == [2.0, 3.0]
    assert np.all(np.abs(params["fw.Wx"]) <= 1.0 / math.sqrt(6))


def test_zero_cell_stays_at_rest():
    w = CellWeights(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    h, c = lstm_cell(np.ones(3), np.zeros(2), np.zeros(2), w)
    assert h.tolist() == [0.0, 0.0]
    assert c.tolist() == [0.0, 0.0]


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_single_unit_cell_by_hand(activation):
    a = [0.3, -0.2, 0.7, 0.1]
    w = CellWeights(np.array([a]), np.array([[0.5, 0.5, 0.5, 0.5]]), np.array([0.0, 1.0, 0.0, 0.0]))
    x, h_prev, c_prev = 2.0, 0.4, 0.5
    act = math.tanh if activation == "tanh" else (lambda v: max(v, 0.0))
    z = [a[j] * x + 0.5 * h_prev + (1.0 if j == 1 else 0.0) for j in range(4)]
    i, f, o = _sigmoid(z[0]), _sigmoid(z[1]), _sigmoid(z[3])
    c = f * c_prev + i * act(z[2])
    h = o * act(c)
    got_h, got_c = lstm_cell([x], [h_prev], [c_prev], w, activation)
    assert got_c[0] == pytest.approx(c, rel=1e-14)
    assert got_h[0] == pytest.approx(h, rel=1e-14)


def test_tanh_cell_output_is_bounded():
    rng = np.random.default_rng(4)
    w = CellWeights(rng.normal(0, 5, (3, 8)), rng.normal(0, 5, (2, 8)), rng.normal(0, 5, 8))
    h, _ = lstm_cell(rng.normal(0, 10, 3), rng.normal(size=2), rng.normal(size=2), w)
    assert np.all(np.abs(h) <= 1.0)


def test_cell_rejects_mismatched_input():
    w = CellWeights(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    with pytest.raises(ShapeMismatchError):
        lstm_cell(np.ones(4), np.zeros(2), np.zeros(2), w)


def test_bilstm_palindrome_swaps_directions(tiny_model):
    params, x, _, _ = tiny_model
    params = dict(params)
    for part in ("Wx", "Wh", "b"):
        params[f"bw.{part}"] = params[f"fw.{part}"]
    seq = x[0]
    palindrome = np.concatenate([seq[:3], seq[:2][::-1]])
    out = bilstm_forward(palindrome, params)
    h = 4
    assert np.allclose(out[:, h:], out[::-1, :h], rtol=0, atol=1e-15)


def test_bilstm_single_step(tiny_model):
    params, x, _, _ = tiny_model
    params = dict(params)
    for part in ("Wx", "Wh", "b"):
        params[f"bw.{part}"] = params[f"fw.{part}"]
    out = bilstm_forward(x[0, :1], params)
    assert out.shape == (1, 8)
    assert np.array_equal(out[0, :4], out[0, 4:])


def test_model_forward_heads(tiny_model):
    params, x, _, _ = tiny_model
    params = dict(params)
    params["coord.W"] = np.zeros_like(params["coord.W"])
    params["coord.b"] = np.array([1.5, -0.5])
    u_hat, probs = model_forward(x[0], 2, params)
    assert u_hat.tolist() == [1.5, -0.5]
    assert probs.shape == (3,)
    assert abs(probs.sum() - 1.0) < 1e-12
    assert np.all(probs > 0)
    with pytest.raises(DomainError):
        model_forward(x[0], 3, params)


def test_softmax_properties():
    assert softmax(np.zeros(4)).tolist() == [0.25] * 4
    logits = np.array([0.3, -1.2, 2.0])
    assert np.allclose(softmax(logits), softmax(logits + 7.5), rtol=0, atol=1e-15)


def test_predict_matches_single_forward(tiny_model):
    params, x, k, _ = tiny_model
    u_hat, probs = predict(params, x, k, chunk=3)
    for n in range(len(x)):
        u1, p1 = model_forward(x[n], int(k[n]), params)
        assert np.allclose(u_hat[n], u1, rtol=0, atol=1e-12)
        assert np.allclose(probs[n], p1, rtol=0, atol=1e-12)


def test_hybrid_loss_examples():
    spec = LossSpec(alpha=0.0, n_classes=4)
    y = np.array([[0, 1, 0, 0]])
    parts = hybrid_loss(np.array([[1.0, 0.0]]), np.full((1, 4), 0.25), np.zeros((1, 2)), y, {}, spec)
    assert parts.total == pytest.approx(1.0 + math.log(4.0), rel=1e-15)
    assert parts.total == pytest.approx(2.3863, abs=1e-4)

    perfect = hybrid_loss(np.zeros((1, 2)), np.array([[0.0, 1.0, 0.0, 0.0]]), np.zeros((1, 2)), y, {}, spec)
    assert perfect.total == 0.0

    clamped = hybrid_loss(np.zeros((1, 2)), np.array([[1.0, 0.0, 0.0, 0.0]]), np.zeros((1, 2)), y, {}, spec)
    assert clamped.cls == pytest.approx(-math.log(1e-12))


def test_class_accuracy_counts_argmax_hits():
    y = np.eye(3)[[0, 1, 2, 2]]
    probs = np.array([
        [0.7, 0.2, 0.1],
        [0.5, 0.4, 0.1],
        [0.1, 0.1, 0.8],
        [0.3, 0.3, 0.4],
    ])
    assert class_accuracy(probs, y) == 0.75
    spec = LossSpec(alpha=0.0, n_classes=3)
    parts = hybrid_loss(np.zeros((4, 2)), probs, np.zeros((4, 2)), y, {}, spec)
    assert parts.accuracy == 0.75
    with pytest.raises(ShapeMismatchError):
        class_accuracy(probs, y[:, :2])
    with pytest.raises(DomainError):
        class_accuracy(np.zeros((0, 3)), np.zeros((0, 3)))


def test_gradient_pass_leaves_accuracy_unset(tiny_model):
    params, x, k, u = tiny_model
    spec = LossSpec(alpha=0.0, n_classes=3)
    parts, _ = loss_and_grads(params, x, k, u, spec)
    assert math.isnan(parts.accuracy)
    assert 0.0 <= evaluate_loss(params, x, k, u, spec).accuracy <= 1.0


def test_regularizer_adds_squared_norm(tiny_model):
    params, x, k, u = tiny_model
    zero = evaluate_loss(params, x, k, u, LossSpec(alpha=0.0, n_classes=3))
    one = evaluate_loss(params, x, k, u, LossSpec(alpha=1.0, n_classes=3))
    sq = sum(float(np.sum(v * v)) for v in params.values())
    assert one.total - zero.total == pytest.approx(sq, rel=1e-12)


def test_regularizer_gradient_is_two_alpha_theta(tiny_model):
    params, x, k, u = tiny_model
    _, g0 = loss_and_grads(params, x, k, u, LossSpec(alpha=0.0, n_classes=3))
    _, g1 = loss_and_grads(params, x, k, u, LossSpec(alpha=0.3, n_classes=3))
    for name in PARAM_ORDER:
        assert np.allclose(g1[name] - g0[name], 0.6 * params[name], rtol=0, atol=1e-12)


def test_embedding_gradient_only_on_used_rows(tiny_model):
    params, x, _, u = tiny_model
    k = np.ones(len(x), dtype=np.intp)
    _, grads = loss_and_grads(params, x, k, u, LossSpec(alpha=0.0, n_classes=3))
    assert np.all(grads["embed"][0] == 0.0)
    assert np.all(grads["embed"][2] == 0.0)
    assert np.any(grads["embed"][1] != 0.0)


def test_gradients_match_finite_differences(tiny_model):
    params, x, k, u = tiny_model
    spec = LossSpec(alpha=1e-3, n_classes=3)
    parts, grads = loss_and_grads(params, x, k, u, spec)
    assert parts.total == pytest.approx(evaluate_loss(params, x, k, u, spec).total, rel=1e-12)

    step = 1e-5
    for name in PARAM_ORDER:
        fd = np.zeros_like(params[name])
        for idx in np.ndindex(params[name].shape):
            bumped = {n: v.copy() for n, v in params.items()}
            bumped[name][idx] += step
            up = evaluate_loss(bumped, x, k, u, spec).total
            bumped[name][idx] -= 2 * step
            down = evaluate_loss(bumped, x, k, u, spec).total
            fd[idx] = (up - down) / (2 * step)
        scale = max(float(np.max(np.abs(fd))), 1e-6)
        assert float(np.max(np.abs(grads[name] - fd))) / scale < 1e-4, name


def test_gradient_chunks_are_worker_independent():
    rng = np.random.default_rng(9)
    params = init_params(TINY_DIMS, rng)
    x = rng.normal(size=(70, 5, 6))
    k = rng.integers(0, 3, size=70)
    u = rng.normal(size=(70, 2))
    spec = LossSpec(alpha=1e-4, n_classes=3)
    p1, g1 = loss_and_grads(params, x, k, u, spec, workers=1)
    p4, g4 = loss_and_grads(params, x, k, u, spec, workers=4)
    assert p1 == p4
    for name in PARAM_ORDER:
        assert np.array_equal(g1[name], g4[name])


def test_empty_batch_is_rejected(tiny_model):
    params, x, k, u = tiny_model
    with pytest.raises(DomainError):
        loss_and_grads(params, x[:0], k[:0], u[:0], LossSpec(n_classes=3))


def test_baseline_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    params = init_baseline(BaselineDims(n_inputs=12, hidden=5), rng)
    x = rng.normal(size=(6, 2, 6))
    u = rng.normal(size=(6, 2))
    parts, grads = baseline_loss_and_grads(params, x, u, 1e-3)
    assert parts.cls == 0.0
    step = 1e-6
    for name, value in params.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            bumped = {n: v.copy() for n, v in params.items()}
            bumped[name][idx] += step
            up = baseline_loss_and_grads(bumped, x, u, 1e-3)[0].total
            bumped[name][idx] -= 2 * step
            down = baseline_loss_and_grads(bumped, x, u, 1e-3)[0].total
            fd[idx] = (up - down) / (2 * step)
        scale = max(float(np.max(np.abs(fd))), 1e-6)
        assert float(np.max(np.abs(grads[name] - fd))) / scale < 1e-4, name
