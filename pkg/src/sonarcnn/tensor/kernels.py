"""Forward and backward kernels for the fixed layer set used by the model zoo.

All tensors are numpy arrays in batch-height-width-channels (NHWC) layout.
Flat activations are (batch, features). Kernels never mutate their inputs or
parameters; batch-norm running statistics are returned to the caller through
the cache (``cache["batch_mean"]``, ``cache["batch_var"]``) instead of being
updated in place.
"""
from __future__ import annotations

import math
from typing import Any, Callable, Dict, List, Mapping, Sequence, Tuple

import numpy as np

Params = Mapping[str, np.ndarray]
Grads = Dict[str, np.ndarray]

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99


class ShapeError(ValueError):
    """Raised when a kernel receives inputs whose extents it cannot handle."""

    def __init__(self, message: str, node: str | None = None):
        self.node = node
        super().__init__(f"{node}: {message}" if node else message)


# --------------------------------------------------------------------------
# padding helpers


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    if padding == "valid":
        return (size - kernel) // stride + 1 if size >= kernel else 0
    raise ValueError(f"unknown padding {padding!r}")


def same_pads(size: int, kernel: int, stride: int) -> Tuple[int, int]:
    """Zero padding for 'same': extra cell goes to the bottom/right."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _pads(shape: Sequence[int], kernel: Tuple[int, int], stride: int, padding: str):
    if padding == "valid":
        return (0, 0), (0, 0)
    return same_pads(shape[1], kernel[0], stride), same_pads(shape[2], kernel[1], stride)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    """Yield (i, j, view) for every kernel offset; view is (N, ho, wo, C)."""
    for i in range(kh):
        for j in range(kw):
            yield i, j, xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]


def _pad(x: np.ndarray, ph: Tuple[int, int], pw: Tuple[int, int], value: float = 0.0) -> np.ndarray:
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), ph, pw, (0, 0)), constant_values=value)


def _unpad(xp: np.ndarray, ph: Tuple[int, int], pw: Tuple[int, int]) -> np.ndarray:
    h = xp.shape[1] - ph[1]
    w = xp.shape[2] - pw[1]
    return xp[:, ph[0]:h, pw[0]:w, :]


def _check_rank(x: np.ndarray, rank: int, kind: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{kind} expects a rank-{rank} input, got shape {x.shape}")


# --------------------------------------------------------------------------
# convolution


def _im2col(x, kh, kw, stride, padding):
    ph, pw = _pads(x.shape, (kh, kw), stride, padding)
    xp = _pad(x, ph, pw)
    n, hp, wp, c = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit a {x.shape[1]}x{x.shape[2]} map")
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i, j, view in _windows(xp, kh, kw, stride, ho, wo):
        cols[:, :, :, i, j, :] = view
    return cols.reshape(n * ho * wo, kh * kw * c), (ph, pw, xp.shape, ho, wo)


def _col2im(dcols, geom, kh, kw, stride, c):
    ph, pw, xp_shape, ho, wo = geom
    n = xp_shape[0]
    dcols = dcols.reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    for i, j, view in _windows(dxp, kh, kw, stride, ho, wo):
        view += dcols[:, :, :, i, j, :]
    return _unpad(dxp, ph, pw)


def conv2d_forward(attrs, params, inputs, training):
    (x,) = inputs
    _check_rank(x, 4, "conv2d")
    kernel = params["kernel"]
    kh, kw, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d expects {cin} input channels, got {x.shape[3]}")
    stride = attrs.get("strides", 1)
    cols, geom = _im2col(x, kh, kw, stride, attrs.get("padding", "same"))
    out = cols @ kernel.reshape(kh * kw * cin, cout)
    if "bias" in params:
        out += params["bias"]
    out = out.reshape(x.shape[0], geom[3], geom[4], cout)
    return out, {"cols": cols, "geom": geom}


def conv2d_backward(attrs, params, cache, grad):
    kernel = params["kernel"]
    kh, kw, cin, cout = kernel.shape
    g2 = grad.reshape(-1, cout)
    grads = {"kernel": (cache["cols"].T @ g2).reshape(kernel.shape)}
    if "bias" in params:
        grads["bias"] = g2.sum(axis=0)
    dcols = g2 @ kernel.reshape(kh * kw * cin, cout).T
    dx = _col2im(dcols, cache["geom"], kh, kw, attrs.get("strides", 1), cin)
    return [dx], grads


def depthwise_forward(attrs, params, inputs, training):
    (x,) = inputs
    _check_rank(x, 4, "depthwise_conv2d")
    kernel = params["kernel"]  # (kh, kw, C)
    kh, kw, c = kernel.shape
    if x.shape[3] != c:
        raise ShapeError(f"depthwise_conv2d expects {c} channels, got {x.shape[3]}")
    stride = attrs.get("strides", 1)
    ph, pw = _pads(x.shape, (kh, kw), stride, attrs.get("padding", "same"))
    xp = _pad(x, ph, pw)
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit a {x.shape[1]}x{x.shape[2]} map")
    out = np.zeros((x.shape[0], ho, wo, c), dtype=x.dtype)
    for i, j, view in _windows(xp, kh, kw, stride, ho, wo):
        out += view * kernel[i, j]
    if "bias" in params:
        out += params["bias"]
    return out, {"xp": xp, "pads": (ph, pw), "hw": (ho, wo)}


def depthwise_backward(attrs, params, cache, grad):
    kernel = params["kernel"]
    kh, kw, c = kernel.shape
    stride = attrs.get("strides", 1)
    xp = cache["xp"]
    ho, wo = cache["hw"]
    dkernel = np.empty_like(kernel)
    dxp = np.zeros_like(xp)
    for i, j, view in _windows(xp, kh, kw, stride, ho, wo):
        dkernel[i, j] = np.einsum("nhwc,nhwc->c", view, grad)
    for i, j, dview in _windows(dxp, kh, kw, stride, ho, wo):
        dview += grad * kernel[i, j]
    grads = {"kernel": dkernel}
    if "bias" in params:
        grads["bias"] = grad.sum(axis=(0, 1, 2))
    return [_unpad(dxp, *cache["pads"])], grads


# --------------------------------------------------------------------------
# dense / batch norm / activations


def dense_forward(attrs, params, inputs, training):
    (x,) = inputs
    _check_rank(x, 2, "dense")
    kernel = params["kernel"]
    if x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"dense expects {kernel.shape[0]} features, got {x.shape[1]}")
    out = x @ kernel
    if "bias" in params:
        out = out + params["bias"]
    return out, {"x": x}


def dense_backward(attrs, params, cache, grad):
    grads = {"kernel": cache["x"].T @ grad}
    if "bias" in params:
        grads["bias"] = grad.sum(axis=0)
    return [grad @ params["kernel"].T], grads


def batch_norm_forward(attrs, params, inputs, training):
    (x,) = inputs
    eps = attrs.get("epsilon", BN_EPSILON)
    axes = tuple(range(x.ndim - 1))
    gamma, beta = params["gamma"], params["beta"]
    if x.shape[-1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm expects {gamma.shape[0]} channels, got {x.shape[-1]}")
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean = params["moving_mean"]
        var = params["moving_variance"]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    cache = {"xhat": xhat, "inv_std": inv_std, "training": training}
    if training:
        count = x.size // x.shape[-1]
        cache["batch_mean"] = mean
        # running variance tracks the unbiased estimate
        cache["batch_var"] = var * count / max(count - 1, 1)
    return out.astype(x.dtype, copy=False), cache


def batch_norm_backward(attrs, params, cache, grad):
    xhat, inv_std = cache["xhat"], cache["inv_std"]
    axes = tuple(range(grad.ndim - 1))
    gamma = params["gamma"]
    grads = {"gamma": (grad * xhat).sum(axis=axes), "beta": grad.sum(axis=axes)}
    dxhat = grad * gamma
    if cache["training"]:
        m = grad.size // grad.shape[-1]
        dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    else:
        dx = dxhat * inv_std
    return [dx.astype(grad.dtype, copy=False)], grads


def relu_forward(attrs, params, inputs, training):
    (x,) = inputs
    mask = x > 0
    return x * mask, {"mask": mask}


def relu_backward(attrs, params, cache, grad):
    return [grad * cache["mask"]], {}


def softmax_forward(attrs, params, inputs, training):
    (x,) = inputs
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, {"y": y}


def softmax_backward(attrs, params, cache, grad):
    y = cache["y"]
    return [y * (grad - (grad * y).sum(axis=-1, keepdims=True))], {}


# --------------------------------------------------------------------------
# pooling / resampling


def _pool_geometry(x, attrs):
    ph_, pw_ = attrs["pool_size"]
    stride = attrs.get("strides", ph_)
    padding = attrs.get("padding", "valid")
    ph, pw = _pads(x.shape, (ph_, pw_), stride, padding)
    ho = (x.shape[1] + sum(ph) - ph_) // stride + 1
    wo = (x.shape[2] + sum(pw) - pw_) // stride + 1
    if x.shape[1] + sum(ph) < ph_ or x.shape[2] + sum(pw) < pw_:
        raise ShapeError(f"pool {ph_}x{pw_} does not fit a {x.shape[1]}x{x.shape[2]} map")
    return ph_, pw_, stride, ph, pw, ho, wo


def max_pool_forward(attrs, params, inputs, training):
    (x,) = inputs
    _check_rank(x, 4, "max_pool")
    kh, kw, stride, ph, pw, ho, wo = _pool_geometry(x, attrs)
    xp = _pad(x, ph, pw, value=-np.inf)
    stack = np.stack([v for _, _, v in _windows(xp, kh, kw, stride, ho, wo)], axis=0)
    idx = stack.argmax(axis=0)
    out = np.take_along_axis(stack, idx[None], axis=0)[0]
    return out, {"idx": idx, "geom": (kh, kw, stride, ph, pw, ho, wo), "xp_shape": xp.shape}


def max_pool_backward(attrs, params, cache, grad):
    kh, kw, stride, ph, pw, ho, wo = cache["geom"]
    dxp = np.zeros(cache["xp_shape"], dtype=grad.dtype)
    idx = cache["idx"]
    for k, (_, _, view) in enumerate(_windows(dxp, kh, kw, stride, ho, wo)):
        view += np.where(idx == k, grad, 0)
    return [_unpad(dxp, ph, pw)], {}


def avg_pool_forward(attrs, params, inputs, training):
    (x,) = inputs
    _check_rank(x, 4, "avg_pool")
    if attrs.get("padding", "valid") != "valid":
        raise ShapeError("avg_pool supports valid padding only")
    kh, kw, stride, ph, pw, ho, wo = _pool_geometry(x, attrs)
    out = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=x.dtype)
    for _, _, view in _windows(x, kh, kw, stride, ho, wo):
        out += view
    out /= kh * kw
    return out, {"shape": x.shape, "geom": (kh, kw, stride, ho, wo)}


def avg_pool_backward(attrs, params, cache, grad):
    kh, kw, stride, ho, wo = cache["geom"]
    dx = np.zeros(cache["shape"], dtype=grad.dtype)
    share = grad / (kh * kw)
    for _, _, view in _windows(dx, kh, kw, stride, ho, wo):
        view += share
    return [dx], {}


def global_avg_pool_forward(attrs, params, inputs, training):
    (x,) = inputs
    _check_rank(x, 4, "global_avg_pool")
    return x.mean(axis=(1, 2)), {"shape": x.shape}


def global_avg_pool_backward(attrs, params, cache, grad):
    n, h, w, c = cache["shape"]
    dx = np.broadcast_to(grad[:, None, None, :] / (h * w), (n, h, w, c))
    return [np.ascontiguousarray(dx)], {}


def upsample_forward(attrs, params, inputs, training):
    (x,) = inputs
    _check_rank(x, 4, "upsample")
    f = attrs.get("factor", 2)
    return x.repeat(f, axis=1).repeat(f, axis=2), {}


def upsample_backward(attrs, params, cache, grad):
    f = attrs.get("factor", 2)
    n, h, w, c = grad.shape
    return [grad.reshape(n, h // f, f, w // f, f, c).sum(axis=(2, 4))], {}


# --------------------------------------------------------------------------
# structural


def flatten_forward(attrs, params, inputs, training):
    (x,) = inputs
    return x.reshape(x.shape[0], -1), {"shape": x.shape}


def reshape_backward(attrs, params, cache, grad):
    return [grad.reshape(cache["shape"])], {}


def reshape_forward(attrs, params, inputs, training):
    (x,) = inputs
    target = tuple(attrs["target_shape"])
    if math.prod(target) != math.prod(x.shape[1:]):
        raise ShapeError(f"cannot reshape {x.shape[1:]} to {target}")
    return x.reshape((x.shape[0],) + target), {"shape": x.shape}


def add_forward(attrs, params, inputs, training):
    first = inputs[0]
    for other in inputs[1:]:
        if other.shape != first.shape:
            raise ShapeError(f"add operands differ: {first.shape} vs {other.shape}")
    out = first.copy()
    for other in inputs[1:]:
        out += other
    return out, {"n": len(inputs)}


def add_backward(attrs, params, cache, grad):
    return [grad] * cache["n"], {}


def concat_forward(attrs, params, inputs, training):
    base = inputs[0].shape[:-1]
    for other in inputs[1:]:
        if other.shape[:-1] != base:
            raise ShapeError(f"concat operands differ: {inputs[0].shape} vs {other.shape}")
    return np.concatenate(inputs, axis=-1), {"splits": np.cumsum([t.shape[-1] for t in inputs])[:-1]}


def concat_backward(attrs, params, cache, grad):
    return np.split(grad, cache["splits"], axis=-1), {}


def identity_forward(attrs, params, inputs, training):
    return inputs[0], {}


def identity_backward(attrs, params, cache, grad):
    return [grad], {}


# --------------------------------------------------------------------------
# registry

Forward = Callable[[Mapping[str, Any], Params, Sequence[np.ndarray], bool], Tuple[np.ndarray, dict]]
Backward = Callable[[Mapping[str, Any], Params, dict, np.ndarray], Tuple[List[np.ndarray], Grads]]

KERNELS: Dict[str, Tuple[Forward, Backward]] = {
    "input": (identity_forward, identity_backward),
    "conv2d": (conv2d_forward, conv2d_backward),
    "depthwise_conv2d": (depthwise_forward, depthwise_backward),
    "dense": (dense_forward, dense_backward),
    "batch_norm": (batch_norm_forward, batch_norm_backward),
    "relu": (relu_forward, relu_backward),
    "softmax": (softmax_forward, softmax_backward),
    "max_pool": (max_pool_forward, max_pool_backward),
    "avg_pool": (avg_pool_forward, avg_pool_backward),
    "global_avg_pool": (global_avg_pool_forward, global_avg_pool_backward),
    "upsample": (upsample_forward, upsample_backward),
    "flatten": (flatten_forward, reshape_backward),
    "reshape": (reshape_forward, reshape_backward),
    "add": (add_forward, add_backward),
    "concat": (concat_forward, concat_backward),
}

LAYER_KINDS = tuple(KERNELS)

# parameters updated by the optimizer; everything else in a weight dict is state
TRAINABLE = {
    "conv2d": ("kernel", "bias"),
    "depthwise_conv2d": ("kernel", "bias"),
    "dense": ("kernel", "bias"),
    "batch_norm": ("gamma", "beta"),
}


def _kernel(kind: str):
    try:
        return KERNELS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None


def forward_layer(kind: str, attrs: Mapping[str, Any], params: Params, inputs, *,
                  training: bool = False, node: str | None = None, return_cache: bool = False):
    """Run one layer. ``inputs`` is a single array or a sequence of arrays."""
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    fwd, _ = _kernel(kind)
    try:
        out, cache = fwd(attrs, params, inputs, training)
    except ShapeError as exc:
        raise ShapeError(str(exc), node=node) from None
    return (out, cache) if return_cache else out


def backward_layer(kind: str, attrs: Mapping[str, Any], params: Params, inputs, upstream: np.ndarray, *,
                   training: bool = False, cache: dict | None = None, node: str | None = None):
    """Gradients of a layer w.r.t. its inputs and parameters.

    When ``cache`` is omitted the forward pass is recomputed from ``inputs``.
    Returns ``(input_grads, param_grads)``; ``input_grads`` is a list with
    one entry per input.
    """
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    fwd, bwd = _kernel(kind)
    if cache is None:
        out, cache = forward_layer(kind, attrs, params, inputs, training=training, node=node, return_cache=True)
        if out.shape != upstream.shape:
            raise ShapeError(f"upstream gradient {upstream.shape} does not match output {out.shape}", node=node)
    return bwd(attrs, params, cache, upstream)
