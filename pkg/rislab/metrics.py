import numpy as np

from .errors import ShapeMismatchError


def squared_errors(predicted, truth) -> np.ndarray:
    """Per-sample (x_hat - x)^2 + (y_hat - y)^2."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(t):
        raise ShapeMismatchError(f"{len(p)} predictions for {len(t)} positions")
    if len(p) == 0:
        raise ShapeMismatchError("mse needs at least one position")
    return np.sum((p - t) ** 2, axis=1)


def mse(predicted, truth) -> float:
    return float(np.mean(squared_errors(predicted, truth)))
