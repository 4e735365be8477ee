"""Central finite-difference checks for the layer kernels (float64).

Shared by the unit tests and the acceptance suite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from sonarcnn.tensor.kernels import TRAINABLE, backward_layer, forward_layer

STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-8
SEEDS = (0, 1, 2, 3, 4)


@dataclass
class GradCheck:
    kind: str
    worst_rel: float      # largest relative error among non-negligible gradients
    failures: int         # elements violating both tolerances
    checked: int

    @property
    def ok(self) -> bool:
        return self.failures == 0


def _compare(analytic: np.ndarray, numeric: np.ndarray) -> Tuple[float, int]:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1), 0.0)
    bad = (diff > ABS_FLOOR) & (rel > REL_TOL)
    significant = scale > ABS_FLOOR
    worst = float(rel[significant].max()) if significant.any() else 0.0
    return worst, int(bad.sum())


def check_layer(kind: str, attrs: dict, params: Dict[str, np.ndarray], inputs: List[np.ndarray],
                training: bool, rng: np.random.Generator) -> GradCheck:
    """Compare backward_layer against central differences of sum(out * R)."""
    out = forward_layer(kind, attrs, params, inputs, training=training)
    upstream = rng.standard_normal(out.shape)

    def objective() -> float:
        return float(np.sum(forward_layer(kind, attrs, params, inputs, training=training) * upstream))

    in_grads, p_grads = backward_layer(kind, attrs, params, inputs, upstream, training=training)
    targets = [(x, g) for x, g in zip(inputs, in_grads)]
    targets += [(params[k], p_grads[k]) for k in TRAINABLE.get(kind, ()) if k in params]
    worst, failures, checked = 0.0, 0, 0
    for arr, analytic in targets:
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + STEP
            up = objective()
            arr[idx] = keep - STEP
            down = objective()
            arr[idx] = keep
            numeric[idx] = (up - down) / (2 * STEP)
        w, f = _compare(np.asarray(analytic, np.float64), numeric)
        worst, failures, checked = max(worst, w), failures + f, checked + arr.size
    return GradCheck(kind, worst, failures, checked)


# ------------------------------------------------------------------ cases
# Each case builds (attrs, params, inputs, training) from a generator.
# Inputs avoid the non-differentiable points of relu and max-pool.

def _away_from_zero(rng, shape):
    x = rng.standard_normal(shape)
    return np.sign(x) * (np.abs(x) + 0.05)


def _distinct(rng, shape):
    n = int(np.prod(shape))
    return (rng.permutation(n).astype(np.float64) * 0.1 - n * 0.05).reshape(shape)


def _conv(stride, padding, bias):
    def make(rng):
        params = {"kernel": rng.standard_normal((3, 3, 2, 3)) * 0.5}
        if bias:
            params["bias"] = rng.standard_normal(3)
        return {"strides": stride, "padding": padding}, params, [rng.standard_normal((1, 6, 6, 2))], False
    return make


def _depthwise(stride, padding):
    def make(rng):
        params = {"kernel": rng.standard_normal((3, 3, 2)), "bias": rng.standard_normal(2)}
        return {"strides": stride, "padding": padding}, params, [rng.standard_normal((2, 5, 5, 2))], False
    return make


def _dense(rng):
    return {}, {"kernel": rng.standard_normal((4, 3)), "bias": rng.standard_normal(3)}, [rng.standard_normal((2, 4))], False


def _bn(training):
    def make(rng):
        params = {"gamma": rng.uniform(0.5, 1.5, 3), "beta": rng.standard_normal(3),
                  "moving_mean": rng.standard_normal(3), "moving_variance": rng.uniform(0.5, 2.0, 3)}
        return {}, params, [rng.standard_normal((2, 3, 3, 3))], training
    return make


def _softmax(rng):
    return {}, {}, [rng.standard_normal((3, 5))], False


def _relu(rng):
    return {}, {}, [_away_from_zero(rng, (2, 3, 3, 2))], False


def _max_pool(pool, stride, padding):
    def make(rng):
        return {"pool_size": (pool, pool), "strides": stride, "padding": padding}, {}, [_distinct(rng, (1, 5, 5, 2))], False
    return make


def _avg_pool(rng):
    return {"pool_size": (2, 2), "strides": 2}, {}, [rng.standard_normal((2, 4, 4, 2))], False


def _gap(rng):
    return {}, {}, [rng.standard_normal((2, 3, 3, 2))], False


def _upsample(rng):
    return {"factor": 2}, {}, [rng.standard_normal((1, 3, 3, 2))], False


def _flatten(rng):
    return {}, {}, [rng.standard_normal((2, 2, 3, 2))], False


def _reshape(rng):
    return {"target_shape": (2, 2, 3)}, {}, [rng.standard_normal((2, 12))], False


def _add(rng):
    return {}, {}, [rng.standard_normal((2, 3, 3, 2)), rng.standard_normal((2, 3, 3, 2))], False


def _concat(rng):
    return {}, {}, [rng.standard_normal((2, 3, 3, 2)), rng.standard_normal((2, 3, 3, 1))], False


CASES: Dict[str, Tuple[str, Callable]] = {
    "conv2d_same_s1": ("conv2d", _conv(1, "same", True)),
    "conv2d_same_s2": ("conv2d", _conv(2, "same", False)),
    "conv2d_valid_s1": ("conv2d", _conv(1, "valid", True)),
    "conv2d_valid_s2": ("conv2d", _conv(2, "valid", True)),
    "depthwise_same_s1": ("depthwise_conv2d", _depthwise(1, "same")),
    "depthwise_same_s2": ("depthwise_conv2d", _depthwise(2, "same")),
    "depthwise_valid_s1": ("depthwise_conv2d", _depthwise(1, "valid")),
    "dense": ("dense", _dense),
    "batch_norm_train": ("batch_norm", _bn(True)),
    "batch_norm_infer": ("batch_norm", _bn(False)),
    "relu": ("relu", _relu),
    "softmax": ("softmax", _softmax),
    "max_pool_2_valid": ("max_pool", _max_pool(2, 2, "valid")),
    "max_pool_3_s2_same": ("max_pool", _max_pool(3, 2, "same")),
    "avg_pool": ("avg_pool", _avg_pool),
    "global_avg_pool": ("global_avg_pool", _gap),
    "upsample": ("upsample", _upsample),
    "flatten": ("flatten", _flatten),
    "reshape": ("reshape", _reshape),
    "add": ("add", _add),
    "concat": ("concat", _concat),
}


def run_case(name: str, seed: int) -> GradCheck:
    kind, make = CASES[name]
    rng = np.random.default_rng(seed)
    attrs, params, inputs, training = make(rng)
    return check_layer(kind, attrs, params, inputs, training, rng)


def run_suite(seeds=SEEDS) -> List[Tuple[str, int, GradCheck]]:
    return [(name, s, run_case(name, s)) for name in CASES for s in seeds]
