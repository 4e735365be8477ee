"""Training losses. Both return ``(value, gradient w.r.t. prediction)``."""
from __future__ import annotations

import numpy as np

PROB_EPSILON = 1e-7


def _one_hot(target: np.ndarray, classes: int, dtype) -> np.ndarray:
    out = np.zeros((target.shape[0], classes), dtype=dtype)
    out[np.arange(target.shape[0]), target.astype(np.int64)] = 1
    return out


def cross_entropy(prediction: np.ndarray, target: np.ndarray):
    """Mean categorical cross-entropy of softmax outputs.

    ``target`` may be one-hot (same shape as ``prediction``) or a vector of
    class indices. Probabilities are clipped to [eps, 1 - eps] before the
    log; the gradient is zero where clipping was active.
    """
    if target.ndim == 1:
        target = _one_hot(target, prediction.shape[-1], prediction.dtype)
    if target.shape != prediction.shape:
        raise ValueError(f"target shape {target.shape} does not match prediction {prediction.shape}")
    n = prediction.shape[0]
    clipped = np.clip(prediction, PROB_EPSILON, 1 - PROB_EPSILON)
    value = float(-(target * np.log(clipped)).sum() / n)
    inside = (prediction > PROB_EPSILON) & (prediction < 1 - PROB_EPSILON)
    grad = np.where(inside, -target / clipped, 0.0) / n
    return value, grad.astype(prediction.dtype, copy=False)


def mse(prediction: np.ndarray, target: np.ndarray):
    """Mean squared error averaged over every element."""
    if target.shape != prediction.shape:
        raise ValueError(f"target shape {target.shape} does not match prediction {prediction.shape}")
    diff = prediction - target
    value = float(np.mean(np.square(diff, dtype=np.float64)))
    return value, (2.0 / diff.size) * diff


LOSSES = {"cross_entropy": cross_entropy, "mse": mse}


def loss(kind: str, prediction: np.ndarray, target: np.ndarray):
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}") from None
    return fn(prediction, target)
