"""
Optimization: Adam, global-norm clipping, the epoch loop with best-on-validation
selection, and grid search over hyper-parameters.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .dataset import Dataset, featurize_many, fit_norm, targets
from .errors import InfeasibleRequestError, NonFiniteError, ShapeMismatchError
from .neural import LossParts, LossSpec, Params, evaluate_loss, init_params, loss_and_grads
from .schemas import EpochRecord, ModelDims, NormStats, TrainConfig

logger = logging.getLogger(__name__)

# SeedSequence stream tags
_INIT_STREAM = 11
_SHUFFLE_STREAM = 12


# ============================================================
# ADAM
# ============================================================

@dataclass(frozen=True)
class OptimizerState:
    m: Params
    v: Params
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(v) for name, v in params.items()},
        v={name: np.zeros_like(v) for name, v in params.items()},
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params: Params, grads: Params, state: OptimizerState) -> tuple[Params, OptimizerState]:
    """Bias-corrected Adam update. Inputs are not mutated."""
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise ShapeMismatchError(f"gradient {name} does not match any parameter shape")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}")

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_params[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimizerState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def clip_by_global_norm(grads: Params, max_norm: float | None) -> tuple[Params, float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


# ============================================================
# EPOCH LOOP
# ============================================================

BatchLoss = Callable[[Params, np.ndarray], tuple[LossParts, Params]]
ValLoss = Callable[[Params], LossParts]


@dataclass
class TrainResult:
    params: Params
    history: list[EpochRecord]
    init_val: LossParts
    best_val: LossParts
    best_epoch: int
    stats: NormStats | None = None
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def final_train_loss(self) -> float:
        return self.history[-1].train_loss if self.history else float("nan")


def _copy(params: Params) -> Params:
    return {name: v.copy() for name, v in params.items()}


def fit(params: Params, n_train: int, batch_loss: BatchLoss, val_loss: ValLoss, cfg: TrainConfig) -> TrainResult:
    """
    Mini-batch Adam over a seeded per-epoch shuffle. The initialization is
    the first candidate (epoch 0); later epochs replace it only on strict
    validation improvement.
    """
    if n_train < 1:
        raise InfeasibleRequestError("training split is empty")

    init_val = val_loss(params)
    best_params = _copy(params)
    best_val = init_val
    best_epoch = 0
    history: list[EpochRecord] = []

    state = adam_init(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _SHUFFLE_STREAM]))

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_train)
        total = 0.0
        for b, s in enumerate(range(0, n_train, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            parts, grads = batch_loss(params, idx)
            if not math.isfinite(parts.total):
                raise NonFiniteError(f"non-finite loss at epoch {epoch} batch {b}")
            grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
            try:
                params, state = adam_step(params, grads, state)
            except NonFiniteError as e:
                raise NonFiniteError(f"epoch {epoch} batch {b}: {e}") from e
            total += parts.total * len(idx)

        val = val_loss(params)
        if not math.isfinite(val.total):
            raise NonFiniteError(f"non-finite validation loss at epoch {epoch}")
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=total / n_train,
                val_loss=val.total,
                val_coord=val.coord,
                val_class=val.cls,
                val_reg=val.reg,
                val_accuracy=val.accuracy,
            )
        )
        improved = val.total < best_val.total
        if improved:
            best_params = _copy(params)
            best_val = val
            best_epoch = epoch
        logger.info(
            "epoch epoch=%d train_loss=%.6g val_loss=%.6g val_accuracy=%.4g best_epoch=%d",
            epoch, total / n_train, val.total, val.accuracy, best_epoch,
        )

    return TrainResult(
        params=best_params,
        history=history,
        init_val=init_val,
        best_val=best_val,
        best_epoch=best_epoch,
        config=cfg,
    )


# ============================================================
# LOCALIZER TRAINING
# ============================================================

class Prepared(NamedTuple):
    x_train: np.ndarray
    k_train: np.ndarray
    u_train: np.ndarray
    x_val: np.ndarray
    k_val: np.ndarray
    u_val: np.ndarray
    n_classes: int
    stats: NormStats


def prepare(train_split: Dataset, val_split: Dataset) -> Prepared:
    if len(train_split) == 0 or len(val_split) == 0:
        raise InfeasibleRequestError("train and validation splits must be nonempty")
    stats = fit_norm(train_split.records)
    k_tr, u_tr = targets(train_split.records)
    k_va, u_va = targets(val_split.records)
    return Prepared(
        featurize_many(train_split.records, stats), k_tr, u_tr,
        featurize_many(val_split.records, stats), k_va, u_va,
        train_split.header.k,
        stats,
    )


def train_prepared(data: Prepared, cfg: TrainConfig, workers: int = 1) -> TrainResult:
    dims = ModelDims(
        n_features=data.x_train.shape[-1],
        n_classes=data.n_classes,
        hidden=cfg.hidden,
        hidden2=cfg.hidden2,
        embed_dim=cfg.embed_dim,
    )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _INIT_STREAM]))
    params = init_params(dims, rng, coord_bias=data.stats.u_mean)
    spec = LossSpec(alpha=cfg.alpha, n_classes=data.n_classes)

    def batch_loss(p: Params, idx: np.ndarray):
        return loss_and_grads(p, data.x_train[idx], data.k_train[idx], data.u_train[idx], spec, workers=workers)

    def val_loss(p: Params) -> LossParts:
        return evaluate_loss(p, data.x_val, data.k_val, data.u_val, spec)

    logger.info(
        "train n_train=%d n_val=%d epochs=%d batch=%d lr=%g alpha=%g seed=%d",
        len(data.x_train), len(data.x_val), cfg.epochs, cfg.batch_size, cfg.lr, cfg.alpha, cfg.seed,
    )
    result = fit(params, len(data.x_train), batch_loss, val_loss, cfg)
    result.stats = data.stats
    return result


def train(train_split: Dataset, val_split: Dataset, cfg: TrainConfig, workers: int = 1) -> TrainResult:
    return train_prepared(prepare(train_split, val_split), cfg, workers)


def split_loss(result: TrainResult, split: Dataset) -> LossParts:
    """Loss breakdown and class-head accuracy of a trained localizer on another split."""
    if len(split) == 0:
        raise InfeasibleRequestError("split is empty")
    k, u = targets(split.records)
    spec = LossSpec(alpha=result.config.alpha, n_classes=split.header.k)
    return evaluate_loss(result.params, featurize_many(split.records, result.stats), k, u, spec)


# ============================================================
# GRID SEARCH
# ============================================================

class GridRow(NamedTuple):
    rank: int
    grid_index: int
    alpha: float
    lr: float
    best_val_loss: float
    final_train_loss: float
    best_epoch: int


@dataclass
class GridResult:
    best: TrainConfig
    rows: list[GridRow]  # ranked
    results: list[TrainResult]  # grid order


def grid_search(
    grid: list[dict], train_split: Dataset, val_split: Dataset, base: TrainConfig, workers: int = 1
) -> GridResult:
    """One model per grid point; rank by best validation loss, ties by grid order."""
    if not grid:
        raise InfeasibleRequestError("grid is empty")
    data = prepare(train_split, val_split)
    configs = [base.with_overrides(point) for point in grid]
    results = []
    for i, cfg in enumerate(configs):
        logger.info("grid point=%d/%d alpha=%g lr=%g", i + 1, len(configs), cfg.alpha, cfg.lr)
        results.append(train_prepared(data, cfg, workers))

    order = sorted(range(len(configs)), key=lambda i: (results[i].best_val.total, i))
    rows = [
        GridRow(
            rank=rank,
            grid_index=i,
            alpha=configs[i].alpha,
            lr=configs[i].lr,
            best_val_loss=results[i].best_val.total,
            final_train_loss=results[i].final_train_loss,
            best_epoch=results[i].best_epoch,
        )
        for rank, i in enumerate(order, start=1)
    ]
    return GridResult(best=configs[order[0]], rows=rows, results=results)
