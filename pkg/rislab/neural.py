"""
Dual-input / dual-output recurrent localizer.

    channel sequence (F x D) -> BiLSTM(H) -> LSTM(H2, rectified) -> final state
    configuration index      -> embedding(E)
    concat(final state, embedding) -> coordinates (linear, 2)
                                   -> configuration class (softmax, K)

Everything is float64 numpy with hand-written backpropagation through time.
Parameters live in a flat dict keyed by PARAM_ORDER; each cell stores input
weights (in x 4H), recurrent weights (H x 4H) and bias (4H) with gate blocks
in the order i, f, g, o.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import expit

from .errors import DomainError, ShapeMismatchError
from .labels import PROB_FLOOR
from .schemas import BaselineDims, ModelDims, NormStats

logger = logging.getLogger(__name__)

Params = dict[str, np.ndarray]

PARAM_ORDER = (
    "fw.Wx", "fw.Wh", "fw.b",
    "bw.Wx", "bw.Wh", "bw.b",
    "l2.Wx", "l2.Wh", "l2.b",
    "embed",
    "coord.W", "coord.b",
    "cls.W", "cls.b",
)

PARAM_GROUPS = ("fw", "bw", "l2", "embed", "coord", "cls")

# rows per gradient chunk; chunks are reduced in order so worker count never changes results
GRAD_CHUNK = 32


class CellWeights(NamedTuple):
    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray


class LossSpec(BaseModel):
    alpha: float = Field(default=1e-4, ge=0)
    n_classes: int = Field(ge=1)


class LossParts(NamedTuple):
    total: float
    coord: float
    cls: float
    reg: float
    # argmax hit rate of the class head; nan where no class head ran
    accuracy: float = math.nan


# ============================================================
# PARAMETERS
# ============================================================

def param_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    h, h2, d, k, e = dims.hidden, dims.hidden2, dims.n_features, dims.n_classes, dims.embed_dim
    c = dims.concat_width
    return {
        "fw.Wx": (d, 4 * h), "fw.Wh": (h, 4 * h), "fw.b": (4 * h,),
        "bw.Wx": (d, 4 * h), "bw.Wh": (h, 4 * h), "bw.b": (4 * h,),
        "l2.Wx": (2 * h, 4 * h2), "l2.Wh": (h2, 4 * h2), "l2.b": (4 * h2,),
        "embed": (k, e),
        "coord.W": (c, 2), "coord.b": (2,),
        "cls.W": (c, k), "cls.b": (k,),
    }


def init_params(dims: ModelDims, rng: np.random.Generator, coord_bias=None) -> Params:
    """
    Weights ~ U(-s, s) with s = 1/sqrt(fan_in); biases zero except the
    forget gate (1.0). coord_bias seeds the coordinate head with the mean
    training position.
    """
    params: Params = {}
    for name, shape in param_shapes(dims).items():
        if len(shape) == 2:
            s = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-s, s, size=shape)
        else:
            params[name] = np.zeros(shape)
    for cell in ("fw", "bw", "l2"):
        n = params[f"{cell}.b"].shape[0] // 4
        params[f"{cell}.b"][n:2 * n] = 1.0
    if coord_bias is not None:
        params["coord.b"][:] = np.asarray(coord_bias, dtype=np.float64)
    return params


def dims_of(params: Params) -> ModelDims:
    return ModelDims(
        n_features=params["fw.Wx"].shape[0],
        n_classes=params["embed"].shape[0],
        hidden=params["fw.Wh"].shape[0],
        hidden2=params["l2.Wh"].shape[0],
        embed_dim=params["embed"].shape[1],
    )


def group_of(name: str) -> str:
    return name.split(".", 1)[0]


def sq_norm(params: Params) -> float:
    return float(sum(np.sum(v * v) for v in params.values()))


def cell(params: Params, prefix: str) -> CellWeights:
    return CellWeights(params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"])


# ============================================================
# CELL
# ============================================================

def _act(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    raise DomainError(f"unknown activation {activation!r}")


def _act_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def _cell_forward(x, h_prev, c_prev, w: CellWeights, activation: str):
    n_h = w.wh.shape[0]
    if w.wx.shape[1] != 4 * n_h or w.wh.shape[1] != 4 * n_h or w.b.shape != (4 * n_h,):
        raise ShapeMismatchError("cell weights are not (in, 4H), (H, 4H), (4H,)")
    if x.shape[-1] != w.wx.shape[0] or h_prev.shape[-1] != n_h or c_prev.shape[-1] != n_h:
        raise ShapeMismatchError(
            f"cell input {x.shape[-1]}/state {h_prev.shape[-1]} do not match weights {w.wx.shape[0]}/{n_h}"
        )
    z = x @ w.wx + h_prev @ w.wh + w.b
    i = expit(z[..., :n_h])
    f = expit(z[..., n_h:2 * n_h])
    zg = z[..., 2 * n_h:3 * n_h]
    g = _act(zg, activation)
    o = expit(z[..., 3 * n_h:])
    c = f * c_prev + i * g
    ac = _act(c, activation)
    h = o * ac
    return h, c, (x, h_prev, c_prev, i, f, zg, g, o, c, ac)


def lstm_cell(x_t, h_prev, c_prev, weights: CellWeights, activation: str = "tanh"):
    """One step: gates i, f, o sigmoid; candidate and output use `activation`."""
    h, c, _ = _cell_forward(
        np.asarray(x_t, dtype=np.float64),
        np.asarray(h_prev, dtype=np.float64),
        np.asarray(c_prev, dtype=np.float64),
        weights,
        activation,
    )
    return h, c


def _cell_backward(dh, dc, cache, w: CellWeights, activation: str, grads: Params, prefix: str):
    x, h_prev, c_prev, i, f, zg, g, o, c, ac = cache
    do = dh * ac
    dc = dc + dh * o * _act_grad(c, ac, activation)
    dzi = dc * g * i * (1.0 - i)
    dzf = dc * c_prev * f * (1.0 - f)
    dzg = dc * i * _act_grad(zg, g, activation)
    dzo = do * o * (1.0 - o)
    dz = np.concatenate([dzi, dzf, dzg, dzo], axis=-1)
    grads[f"{prefix}.Wx"] += x.T @ dz
    grads[f"{prefix}.Wh"] += h_prev.T @ dz
    grads[f"{prefix}.b"] += dz.sum(axis=0)
    return dz @ w.wx.T, dz @ w.wh.T, dc * f


# ============================================================
# SEQUENCES
# ============================================================

def _run_direction(x: np.ndarray, w: CellWeights, reverse: bool, activation: str):
    n, steps, _ = x.shape
    n_h = w.wh.shape[0]
    h = np.zeros((n, n_h))
    c = np.zeros((n, n_h))
    out = np.empty((n, steps, n_h))
    caches = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        h, c, caches[t] = _cell_forward(x[:, t], h, c, w, activation)
        out[:, t] = h
    return out, caches


def _direction_backward(dout, caches, w: CellWeights, reverse: bool, activation: str, grads: Params, prefix: str):
    n, steps, n_h = dout.shape
    dx = np.empty((n, steps, w.wx.shape[0]))
    dh_next = np.zeros((n, n_h))
    dc_next = np.zeros((n, n_h))
    order = range(steps) if reverse else range(steps - 1, -1, -1)
    for t in order:
        dx[:, t], dh_next, dc_next = _cell_backward(
            dout[:, t] + dh_next, dc_next, caches[t], w, activation, grads, prefix
        )
    return dx


def bilstm_forward(seq: np.ndarray, params: Params) -> np.ndarray:
    """(F, D) -> (F, 2H) per-step [h_fw; h_bw]."""
    x = np.asarray(seq, dtype=np.float64)[None]
    if x.shape[1] < 1:
        raise ShapeMismatchError("sequence needs at least one step")
    fw, _ = _run_direction(x, cell(params, "fw"), False, "tanh")
    bw, _ = _run_direction(x, cell(params, "bw"), True, "tanh")
    return np.concatenate([fw, bw], axis=-1)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(params: Params, x: np.ndarray, k: np.ndarray):
    n_classes = params["embed"].shape[0]
    if np.any(k < 0) or np.any(k >= n_classes):
        raise DomainError(f"configuration index outside [0, {n_classes})")
    if x.shape[-1] != params["fw.Wx"].shape[0]:
        raise ShapeMismatchError(f"feature width {x.shape[-1]} does not match model width {params['fw.Wx'].shape[0]}")
    fw, fw_c = _run_direction(x, cell(params, "fw"), False, "tanh")
    bw, bw_c = _run_direction(x, cell(params, "bw"), True, "tanh")
    hs = np.concatenate([fw, bw], axis=-1)
    l2, l2_c = _run_direction(hs, cell(params, "l2"), False, "relu")
    z = np.concatenate([l2[:, -1], params["embed"][k]], axis=1)
    u_hat = z @ params["coord.W"] + params["coord.b"]
    probs = softmax(z @ params["cls.W"] + params["cls.b"])
    return u_hat, probs, (fw_c, bw_c, l2_c, z, l2.shape)


def model_forward(seq: np.ndarray, k_index: int, params: Params) -> tuple[np.ndarray, np.ndarray]:
    """Single sequence -> (u_hat (2,), probs (K,))."""
    u_hat, probs, _ = _forward(params, np.asarray(seq, dtype=np.float64)[None], np.array([k_index]))
    return u_hat[0], probs[0]


def predict(params: Params, x: np.ndarray, k: np.ndarray, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    us, ps = [], []
    for s in range(0, len(x), chunk):
        u_hat, probs, _ = _forward(params, x[s:s + chunk], np.asarray(k[s:s + chunk]))
        us.append(u_hat)
        ps.append(probs)
    return np.concatenate(us), np.concatenate(ps)


# ============================================================
# LOSS / GRADIENTS
# ============================================================

def _class_log_terms(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -np.sum(y * np.log(np.maximum(probs, PROB_FLOOR)), axis=1)


def hybrid_loss(u_hat, probs, u, y, params: Params, spec: LossSpec) -> LossParts:
    """
    (1/N) sum ||u - u_hat||^2 + (1/N) sum_n sum_m -y_m log p_m + alpha ||theta||^2
    with log clamped at p >= 1e-12. y is the (N, K) one-hot target matrix.
    """
    u_hat = np.atleast_2d(u_hat)
    probs = np.atleast_2d(probs)
    u = np.atleast_2d(u)
    y = np.atleast_2d(y)
    n = u.shape[0]
    if n == 0:
        raise DomainError("empty batch")
    coord = float(np.sum((u - u_hat) ** 2)) / n
    cls = float(np.sum(_class_log_terms(probs, y))) / n
    reg = spec.alpha * sq_norm(params)
    return LossParts(coord + cls + reg, coord, cls, reg, class_accuracy(probs, y))


def class_accuracy(probs: np.ndarray, y: np.ndarray) -> float:
    """Fraction of rows whose most probable class is the target class."""
    probs = np.atleast_2d(probs)
    y = np.atleast_2d(y)
    if probs.shape != y.shape:
        raise ShapeMismatchError(f"probabilities {probs.shape} do not match targets {y.shape}")
    if len(probs) == 0:
        raise DomainError("empty batch")
    return float(np.mean(np.argmax(probs, axis=1) == np.argmax(y, axis=1)))


def _onehot_rows(k: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.zeros((len(k), n_classes))
    y[np.arange(len(k)), k] = 1.0
    return y


def _chunk_data_grads(params: Params, x, k, u, norm: int):
    """Data terms (sums scaled by 1/norm) and their gradients for one chunk."""
    u_hat, probs, (fw_c, bw_c, l2_c, z, l2_shape) = _forward(params, x, k)
    y = _onehot_rows(k, params["embed"].shape[0])
    coord = float(np.sum((u - u_hat) ** 2)) / norm
    cls = float(np.sum(_class_log_terms(probs, y))) / norm

    grads = {name: np.zeros_like(v) for name, v in params.items()}
    du = 2.0 * (u_hat - u) / norm
    dlogits = (probs - y) / norm
    # clamped log has zero slope
    clamped = np.sum(y * probs, axis=1) < PROB_FLOOR
    dlogits[clamped] = 0.0

    grads["coord.W"] += z.T @ du
    grads["coord.b"] += du.sum(axis=0)
    grads["cls.W"] += z.T @ dlogits
    grads["cls.b"] += dlogits.sum(axis=0)
    dz = du @ params["coord.W"].T + dlogits @ params["cls.W"].T

    h2 = params["l2.Wh"].shape[0]
    np.add.at(grads["embed"], k, dz[:, h2:])
    dl2 = np.zeros(l2_shape)
    dl2[:, -1] = dz[:, :h2]
    dhs = _direction_backward(dl2, l2_c, cell(params, "l2"), False, "relu", grads, "l2")
    h = params["fw.Wh"].shape[0]
    _direction_backward(dhs[..., :h], fw_c, cell(params, "fw"), False, "tanh", grads, "fw")
    _direction_backward(dhs[..., h:], bw_c, cell(params, "bw"), True, "tanh", grads, "bw")
    return coord, cls, grads


def loss_and_grads(
    params: Params,
    x: np.ndarray,
    k: np.ndarray,
    u: np.ndarray,
    spec: LossSpec,
    workers: int = 1,
) -> tuple[LossParts, Params]:
    """Hybrid loss and its exact gradient w.r.t. every parameter."""
    n = len(x)
    if n == 0:
        raise DomainError("empty batch")
    k = np.asarray(k, dtype=np.intp)
    bounds = [(s, min(s + GRAD_CHUNK, n)) for s in range(0, n, GRAD_CHUNK)]

    def run(b):
        s, e = b
        return _chunk_data_grads(params, x[s:e], k[s:e], u[s:e], n)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]

    coord = 0.0
    cls = 0.0
    grads = {name: np.zeros_like(v) for name, v in params.items()}
    for c_part, k_part, g_part in parts:
        coord += c_part
        cls += k_part
        for name in grads:
            grads[name] += g_part[name]
    reg = spec.alpha * sq_norm(params)
    for name, v in params.items():
        grads[name] += 2.0 * spec.alpha * v
    return LossParts(coord + cls + reg, coord, cls, reg), grads


def backward(params: Params, x: np.ndarray, k: np.ndarray, u: np.ndarray, spec: LossSpec) -> Params:
    return loss_and_grads(params, x, k, u, spec)[1]


def evaluate_loss(params: Params, x, k, u, spec: LossSpec, chunk: int = 256) -> LossParts:
    u_hat, probs = predict(params, x, k, chunk=chunk)
    return hybrid_loss(u_hat, probs, u, _onehot_rows(np.asarray(k), spec.n_classes), params, spec)


# ============================================================
# INFERENCE BUNDLE
# ============================================================

@dataclass
class Localizer:
    params: Params
    stats: NormStats

    @property
    def dims(self) -> ModelDims:
        return dims_of(self.params)

    def locate(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        """Standardized sequences (N, F, D) + configuration ids -> coordinates (N, 2)."""
        return predict(self.params, x, np.asarray(k, dtype=np.intp))[0]


# ============================================================
# FEED-FORWARD BASELINE
# ============================================================

BASELINE_ORDER = ("h1.W", "h1.b", "h2.W", "h2.b", "out.W", "out.b")


def baseline_shapes(dims: BaselineDims) -> dict[str, tuple[int, ...]]:
    n, h = dims.n_inputs, dims.hidden
    return {
        "h1.W": (n, h), "h1.b": (h,),
        "h2.W": (h, h), "h2.b": (h,),
        "out.W": (h, 2), "out.b": (2,),
    }


def init_baseline(dims: BaselineDims, rng: np.random.Generator, coord_bias=None) -> Params:
    params: Params = {}
    for name, shape in baseline_shapes(dims).items():
        if len(shape) == 2:
            s = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-s, s, size=shape)
        else:
            params[name] = np.zeros(shape)
    if coord_bias is not None:
        params["out.b"][:] = np.asarray(coord_bias, dtype=np.float64)
    return params


def _baseline_forward(params: Params, x: np.ndarray):
    flat = x.reshape(len(x), -1)
    if flat.shape[1] != params["h1.W"].shape[0]:
        raise ShapeMismatchError(f"baseline expects {params['h1.W'].shape[0]} inputs, got {flat.shape[1]}")
    z1 = flat @ params["h1.W"] + params["h1.b"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params["h2.W"] + params["h2.b"]
    a2 = np.maximum(z2, 0.0)
    return a2 @ params["out.W"] + params["out.b"], (flat, z1, a1, z2, a2)


def baseline_forward(params: Params, x: np.ndarray) -> np.ndarray:
    """(N, F, D) standardized sequences, flattened -> coordinates (N, 2)."""
    return _baseline_forward(params, np.asarray(x, dtype=np.float64))[0]


def baseline_loss_and_grads(params: Params, x: np.ndarray, u: np.ndarray, alpha: float) -> tuple[LossParts, Params]:
    n = len(x)
    if n == 0:
        raise DomainError("empty batch")
    u_hat, (flat, z1, a1, z2, a2) = _baseline_forward(params, x)
    coord = float(np.sum((u - u_hat) ** 2)) / n
    reg = alpha * sq_norm(params)

    du = 2.0 * (u_hat - u) / n
    grads = {"out.W": a2.T @ du, "out.b": du.sum(axis=0)}
    dz2 = (du @ params["out.W"].T) * (z2 > 0.0)
    grads["h2.W"] = a1.T @ dz2
    grads["h2.b"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params["h2.W"].T) * (z1 > 0.0)
    grads["h1.W"] = flat.T @ dz1
    grads["h1.b"] = dz1.sum(axis=0)
    for name, v in params.items():
        grads[name] = grads[name] + 2.0 * alpha * v
    return LossParts(coord + reg, coord, 0.0, reg), grads


def baseline_loss(params: Params, x: np.ndarray, u: np.ndarray, alpha: float) -> LossParts:
    u_hat = baseline_forward(params, x)
    coord = float(np.sum((u - u_hat) ** 2)) / len(x)
    reg = alpha * sq_norm(params)
    return LossParts(coord + reg, coord, 0.0, reg)


@dataclass
class Baseline:
    params: Params
    stats: NormStats

    def locate(self, x: np.ndarray) -> np.ndarray:
        return baseline_forward(self.params, x)
