"""Computation-graph representation: named layer nodes, shape inference,
weight initialisation and truncation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..tensor.kernels import LAYER_KINDS, ShapeError, conv_output_size
from ..tensor.rng import make_rng

Shape = Tuple[int, ...]
ShapeTable = Dict[str, Shape]
WeightStore = Dict[str, Dict[str, np.ndarray]]


class GraphError(ValueError):
    pass


class UnknownLayerError(GraphError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


@dataclass(frozen=True, eq=True)
class LayerNode:
    name: str
    kind: str
    inputs: Tuple[str, ...] = ()
    attrs: Mapping[str, Any] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.name, self.kind, self.inputs))


# --------------------------------------------------------------------------
# shape rules


def _spatial(node: LayerNode, shape: Shape) -> Shape:
    if len(shape) != 3:
        raise ShapeError(f"expects an HxWxC input, got {shape}", node=node.name)
    return shape


def _pool_out(node: LayerNode, size: int, pool: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    if size < pool:
        raise ShapeError(f"pool {pool} larger than extent {size}", node=node.name)
    return (size - pool) // stride + 1


def output_shape(node: LayerNode, in_shapes: Sequence[Shape]) -> Shape:
    """Shape (without batch axis) produced by ``node`` for the given inputs."""
    kind, a = node.kind, node.attrs
    if kind == "input":
        return tuple(a["shape"])
    if not in_shapes:
        raise ShapeError("node has no inputs", node=node.name)
    x = in_shapes[0]
    if kind in ("conv2d", "depthwise_conv2d"):
        h, w, c = _spatial(node, x)
        kh, kw = a["kernel_size"]
        s = a.get("strides", 1)
        ho = conv_output_size(h, kh, s, a.get("padding", "same"))
        wo = conv_output_size(w, kw, s, a.get("padding", "same"))
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {kh}x{kw} does not fit a {h}x{w} map", node=node.name)
        return (ho, wo, a["filters"] if kind == "conv2d" else c)
    if kind == "dense":
        if len(x) != 1:
            raise ShapeError(f"dense expects a flat input, got {x}", node=node.name)
        return (a["units"],)
    if kind in ("batch_norm", "relu", "softmax"):
        return x
    if kind in ("max_pool", "avg_pool"):
        h, w, c = _spatial(node, x)
        ph, pw = a["pool_size"]
        s = a.get("strides", ph)
        padding = a.get("padding", "valid")
        return (_pool_out(node, h, ph, s, padding), _pool_out(node, w, pw, s, padding), c)
    if kind == "global_avg_pool":
        return (_spatial(node, x)[2],)
    if kind == "upsample":
        h, w, c = _spatial(node, x)
        f = a.get("factor", 2)
        return (h * f, w * f, c)
    if kind == "flatten":
        return (math.prod(x),)
    if kind == "reshape":
        target = tuple(a["target_shape"])
        if math.prod(target) != math.prod(x):
            raise ShapeError(f"cannot reshape {x} into {target}", node=node.name)
        return target
    if kind == "add":
        for other in in_shapes[1:]:
            if other != x:
                raise ShapeError(f"add operands differ: {x} vs {other}", node=node.name)
        return x
    if kind == "concat":
        for other in in_shapes[1:]:
            if other[:-1] != x[:-1]:
                raise ShapeError(f"concat operands differ: {x} vs {other}", node=node.name)
        return x[:-1] + (sum(s[-1] for s in in_shapes),)
    raise GraphError(f"{node.name}: unknown layer kind {kind!r}")


def param_shapes(node: LayerNode, in_shapes: Sequence[Shape]) -> Dict[str, Shape]:
    """Weight arrays held by ``node``; running statistics included."""
    kind, a = node.kind, node.attrs
    if kind == "conv2d":
        kh, kw = a["kernel_size"]
        shapes = {"kernel": (kh, kw, in_shapes[0][-1], a["filters"])}
        if a.get("use_bias", True):
            shapes["bias"] = (a["filters"],)
        return shapes
    if kind == "depthwise_conv2d":
        kh, kw = a["kernel_size"]
        c = in_shapes[0][-1]
        shapes = {"kernel": (kh, kw, c)}
        if a.get("use_bias", False):
            shapes["bias"] = (c,)
        return shapes
    if kind == "dense":
        shapes = {"kernel": (in_shapes[0][0], a["units"])}
        if a.get("use_bias", True):
            shapes["bias"] = (a["units"],)
        return shapes
    if kind == "batch_norm":
        c = (in_shapes[0][-1],)
        return {"gamma": c, "beta": c, "moving_mean": c, "moving_variance": c}
    return {}


# --------------------------------------------------------------------------
# graph


@dataclass
class ModelGraph:
    """Nodes in topological order with a single input and a designated output.

    ``aliases`` maps alternative layer names (e.g. the names used in published
    results tables) onto canonical node names. ``weights`` is ``None`` for a
    purely structural graph.
    """

    nodes: Tuple[LayerNode, ...]
    output: str
    aliases: Dict[str, str] = field(default_factory=dict)
    weights: Optional[WeightStore] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = tuple(self.nodes)
        self._index = {n.name: i for i, n in enumerate(self.nodes)}
        if len(self._index) != len(self.nodes):
            raise GraphError("duplicate node names")
        inputs = [n for n in self.nodes if n.kind == "input"]
        if len(inputs) != 1:
            raise GraphError(f"graph needs exactly one input node, found {len(inputs)}")
        seen = set()
        for n in self.nodes:
            if n.kind not in LAYER_KINDS:
                raise GraphError(f"{n.name}: unknown layer kind {n.kind!r}")
            for src in n.inputs:
                if src not in seen:
                    raise GraphError(f"{n.name}: input {src!r} is not defined before use")
            seen.add(n.name)
        if self.output not in self._index:
            raise GraphError(f"output node {self.output!r} not in graph")
        self._shapes: Optional[ShapeTable] = None

    # -- lookup ---------------------------------------------------------
    @property
    def input(self) -> LayerNode:
        return next(n for n in self.nodes if n.kind == "input")

    @property
    def input_shape(self) -> Shape:
        return tuple(self.input.attrs["shape"])

    def node(self, name: str) -> LayerNode:
        return self.nodes[self._index[self.resolve(name)]]

    def resolve(self, name: str) -> str:
        if name in self._index:
            return name
        if name in self.aliases:
            return self.aliases[name]
        raise UnknownLayerError(f"unknown layer {name!r}")

    def __contains__(self, name: str) -> bool:
        return name in self._index or name in self.aliases

    def names(self) -> List[str]:
        return [n.name for n in self.nodes]

    # -- analysis -------------------------------------------------------
    def shapes(self) -> ShapeTable:
        if self._shapes is None:
            self._shapes = infer_shapes(self)
        return self._shapes

    def ancestors(self, name: str) -> List[str]:
        """``name`` and every node it depends on, in topological order."""
        target = self.resolve(name)
        keep = {target}
        for n in reversed(self.nodes[: self._index[target] + 1]):
            if n.name in keep:
                keep.update(n.inputs)
        return [n.name for n in self.nodes if n.name in keep]

    def structure_hash(self) -> str:
        import hashlib
        import json

        h = hashlib.sha256()
        for n in self.nodes:
            h.update(json.dumps([n.name, n.kind, list(n.inputs), _jsonable(n.attrs)], sort_keys=True).encode())
        h.update(self.output.encode())
        return h.hexdigest()

    def copy(self, weights: Optional[WeightStore] = None) -> "ModelGraph":
        if weights is None and self.weights is not None:
            weights = {k: {p: a.copy() for p, a in d.items()} for k, d in self.weights.items()}
        return ModelGraph(self.nodes, self.output, dict(self.aliases), weights, dict(self.meta))

    def astype(self, dtype) -> "ModelGraph":
        if self.weights is None:
            return self.copy()
        return self.copy({k: {p: a.astype(dtype) for p, a in d.items()} for k, d in self.weights.items()})

    def param_count(self) -> int:
        if self.weights is None:
            raise GraphError("graph has no weights allocated")
        return sum(a.size for d in self.weights.values() for a in d.values())


def _jsonable(value):
    if isinstance(value, Mapping):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def infer_shapes(graph: ModelGraph, input_size: Optional[int] = None) -> ShapeTable:
    """Output shape of every node (batch axis excluded).

    ``input_size`` overrides the spatial size of the (square) input.
    """
    table: ShapeTable = {}
    for n in graph.nodes:
        if n.kind == "input" and input_size is not None:
            c = n.attrs["shape"][-1]
            table[n.name] = (input_size, input_size, c)
            continue
        table[n.name] = output_shape(n, [table[i] for i in n.inputs])
    return table


def truncate_at(graph: ModelGraph, layer: str) -> ModelGraph:
    """Sub-graph whose output is the activation of ``layer``.

    Downstream nodes are dropped; retained weights are copied so the result
    is independent of ``graph``.
    """
    target = graph.resolve(layer)
    keep = graph.ancestors(target)
    keep_set = set(keep)
    nodes = [n for n in graph.nodes if n.name in keep_set]
    aliases = {a: t for a, t in graph.aliases.items() if t in keep_set}
    weights = None
    if graph.weights is not None:
        weights = {k: {p: a.copy() for p, a in d.items()} for k, d in graph.weights.items() if k in keep_set}
    meta = dict(graph.meta)
    meta["truncated_at"] = layer
    return ModelGraph(nodes, target, aliases, weights, meta)


# --------------------------------------------------------------------------
# weight initialisation


def _glorot(rng: np.random.Generator, shape: Shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_weights(graph: ModelGraph, seed: int = 0, dtype=np.float32) -> WeightStore:
    """Glorot-uniform kernels, zero biases, identity batch-norm."""
    rng = make_rng(seed, 0x57)
    shapes = graph.shapes()
    store: WeightStore = {}
    for n in graph.nodes:
        pshapes = param_shapes(n, [shapes[i] for i in n.inputs])
        if not pshapes:
            continue
        w: Dict[str, np.ndarray] = {}
        for key, shp in pshapes.items():
            if key == "kernel":
                if n.kind == "dense":
                    fan_in, fan_out = shp
                elif n.kind == "depthwise_conv2d":
                    fan_in, fan_out = shp[0] * shp[1] * shp[2], shp[0] * shp[1]
                else:
                    fan_in, fan_out = shp[0] * shp[1] * shp[2], shp[0] * shp[1] * shp[3]
                w[key] = _glorot(rng, shp, fan_in, fan_out, dtype)
            elif key in ("gamma", "moving_variance"):
                w[key] = np.ones(shp, dtype=dtype)
            else:
                w[key] = np.zeros(shp, dtype=dtype)
        store[n.name] = w
    return store


# --------------------------------------------------------------------------
# builder

_PREFIX = {
    "conv2d": "conv2d",
    "depthwise_conv2d": "depthwise_conv2d",
    "dense": "dense",
    "batch_norm": "batch_norm",
    "relu": "relu",
    "softmax": "softmax",
    "max_pool": "max_pool",
    "avg_pool": "avg_pool",
    "global_avg_pool": "global_avg_pool",
    "upsample": "upsample",
    "flatten": "flatten",
    "reshape": "reshape",
    "add": "add",
    "concat": "concat",
}


class GraphBuilder:
    """Incrementally assembles a ModelGraph with deterministic names.

    Nodes are named ``<kind>_<k>`` where ``k`` counts nodes of that kind in
    build order starting at 1; the input node is always ``input``.
    """

    def __init__(self, input_shape: Shape, meta: Optional[Dict[str, Any]] = None):
        self._nodes: List[LayerNode] = []
        self._shapes: ShapeTable = {}
        self._counters: Dict[str, int] = {}
        self.aliases: Dict[str, str] = {}
        self.meta = dict(meta or {})
        self.input = self._add(LayerNode("input", "input", (), {"shape": tuple(input_shape)}))

    def _add(self, node: LayerNode) -> str:
        self._shapes[node.name] = output_shape(node, [self._shapes[i] for i in node.inputs])
        self._nodes.append(node)
        return node.name

    def layer(self, kind: str, inputs: Iterable[str] | str, alias: str | None = None, **attrs) -> str:
        if isinstance(inputs, str):
            inputs = (inputs,)
        k = self._counters.get(kind, 0) + 1
        self._counters[kind] = k
        name = f"{_PREFIX[kind]}_{k}"
        self._add(LayerNode(name, kind, tuple(inputs), attrs))
        if alias:
            self.alias(alias, name)
        return name

    def alias(self, alias: str, target: str) -> None:
        if alias in self.aliases and self.aliases[alias] != target:
            raise GraphError(f"alias {alias!r} already bound to {self.aliases[alias]!r}")
        self.aliases[alias] = target

    def shape(self, name: str) -> Shape:
        return self._shapes[name]

    # -- conveniences ---------------------------------------------------
    def conv(self, x, filters, kernel=3, strides=1, padding="same", use_bias=True, alias=None):
        k = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
        return self.layer("conv2d", x, alias, filters=filters, kernel_size=k, strides=strides,
                          padding=padding, use_bias=use_bias)

    def depthwise(self, x, kernel=3, strides=1, padding="same", use_bias=False, alias=None):
        k = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel)
        return self.layer("depthwise_conv2d", x, alias, kernel_size=k, strides=strides,
                          padding=padding, use_bias=use_bias)

    def dense(self, x, units, use_bias=True, alias=None):
        return self.layer("dense", x, alias, units=units, use_bias=use_bias)

    def bn(self, x, alias=None):
        return self.layer("batch_norm", x, alias)

    def relu(self, x, alias=None):
        return self.layer("relu", x, alias)

    def max_pool(self, x, pool=2, strides=None, padding="valid", alias=None):
        return self.layer("max_pool", x, alias, pool_size=(pool, pool), strides=strides or pool, padding=padding)

    def avg_pool(self, x, pool=2, strides=None, alias=None):
        return self.layer("avg_pool", x, alias, pool_size=(pool, pool), strides=strides or pool, padding="valid")

    def finish(self, output: str) -> ModelGraph:
        g = ModelGraph(tuple(self._nodes), output, dict(self.aliases), None, dict(self.meta))
        g._shapes = dict(self._shapes)
        return g
