"""Node-by-node execution of a ModelGraph (inference, training tape, backward)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..tensor.kernels import KERNELS, ShapeError
from .ir import GraphError, ModelGraph

_EMPTY: Dict[str, np.ndarray] = {}


def _check_input(graph: ModelGraph, x: np.ndarray) -> None:
    expected = graph.input_shape
    if x.ndim != len(expected) + 1 or tuple(x.shape[1:]) != tuple(expected):
        raise ShapeError(f"expected input of shape (N, {', '.join(map(str, expected))}), got {x.shape}",
                         node=graph.input.name)


def forward(graph: ModelGraph, x: np.ndarray, *, training: bool = False,
            capture: Optional[Iterable[str]] = None, output: Optional[str] = None):
    """Evaluate the graph on a batch.

    Returns the activation of ``output`` (default: the graph output). With
    ``capture``, returns ``(out, {name: activation})`` for the requested
    nodes (aliases accepted).
    """
    if graph.weights is None:
        raise GraphError("graph has no weights allocated")
    _check_input(graph, x)
    target = graph.resolve(output or graph.output)
    wanted = {}
    if capture is not None:
        wanted = {graph.resolve(c): c for c in capture}
    needed = set(graph.ancestors(target))
    for name in wanted:
        needed.update(graph.ancestors(name))
    acts: Dict[str, np.ndarray] = {}
    refcount = _refcounts(graph, needed)
    captured = {}
    for node in graph.nodes:
        if node.name not in needed:
            continue
        if node.kind == "input":
            out = x
        else:
            fwd, _ = KERNELS[node.kind]
            params = graph.weights.get(node.name, _EMPTY)
            try:
                out, _ = fwd(node.attrs, params, [acts[i] for i in node.inputs], training)
            except ShapeError as exc:
                raise ShapeError(str(exc), node=node.name) from None
            for i in node.inputs:
                refcount[i] -= 1
                if refcount[i] == 0 and i not in wanted and i != target:
                    del acts[i]
        acts[node.name] = out
        if node.name in wanted:
            captured[wanted[node.name]] = out
    result = acts[target]
    return (result, captured) if capture is not None else result


def _refcounts(graph: ModelGraph, needed) -> Dict[str, int]:
    counts = {n: 0 for n in needed}
    for node in graph.nodes:
        if node.name in needed:
            for i in node.inputs:
                counts[i] += 1
    return counts


@dataclass
class Tape:
    output: np.ndarray
    caches: Dict[str, dict] = field(default_factory=dict)
    order: List[str] = field(default_factory=list)


def forward_train(graph: ModelGraph, x: np.ndarray, *, training: bool = True) -> Tape:
    """Forward pass that records per-node caches for :func:`backward`."""
    if graph.weights is None:
        raise GraphError("graph has no weights allocated")
    _check_input(graph, x)
    needed = set(graph.ancestors(graph.output))
    acts: Dict[str, np.ndarray] = {}
    tape = Tape(output=None)  # type: ignore[arg-type]
    refcount = _refcounts(graph, needed)
    for node in graph.nodes:
        if node.name not in needed:
            continue
        if node.kind == "input":
            acts[node.name] = x
            continue
        fwd, _ = KERNELS[node.kind]
        try:
            out, cache = fwd(node.attrs, graph.weights.get(node.name, _EMPTY),
                             [acts[i] for i in node.inputs], training)
        except ShapeError as exc:
            raise ShapeError(str(exc), node=node.name) from None
        for i in node.inputs:
            refcount[i] -= 1
            if refcount[i] == 0:
                del acts[i]
        acts[node.name] = out
        tape.caches[node.name] = cache
        tape.order.append(node.name)
    tape.output = acts[graph.output]
    return tape


def backward(graph: ModelGraph, tape: Tape, grad_output: np.ndarray,
             want_input_grad: bool = False) -> Tuple[Dict[str, Dict[str, np.ndarray]], Optional[np.ndarray]]:
    """Back-propagate ``grad_output`` through the recorded tape.

    Returns ``(param_grads, input_grad)``; ``param_grads`` is keyed by node
    name then parameter key. ``input_grad`` is ``None`` unless requested.
    """
    if grad_output.shape != tape.output.shape:
        raise ShapeError(f"gradient shape {grad_output.shape} does not match output {tape.output.shape}",
                         node=graph.output)
    grads: Dict[str, np.ndarray] = {graph.output: grad_output}
    param_grads: Dict[str, Dict[str, np.ndarray]] = {}
    input_name = graph.input.name
    for name in reversed(tape.order):
        g = grads.pop(name, None)
        if g is None:
            continue
        node = graph.node(name)
        _, bwd = KERNELS[node.kind]
        in_grads, pg = bwd(node.attrs, graph.weights.get(name, _EMPTY), tape.caches[name], g)
        if pg:
            param_grads[name] = pg
        for src, dg in zip(node.inputs, in_grads):
            if src == input_name and not want_input_grad:
                continue
            if src in grads:
                grads[src] = grads[src] + dg
            else:
                grads[src] = dg
    return param_grads, grads.get(input_name)


def batch_norm_updates(tape: Tape) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Batch statistics recorded by training-mode batch-norm nodes."""
    return {name: (c["batch_mean"], c["batch_var"]) for name, c in tape.caches.items() if "batch_mean" in c}
