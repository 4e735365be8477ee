"""Static parameter / FLOPs / activation-memory accounting.

Nothing here touches weights or runs kernels; every number is derived from
node attributes and the inferred shape table.

FLOPs conventions
-----------------
``mac2`` (default)
    2 FLOPs per multiply-accumulate in conv2d, depthwise_conv2d and dense
    layers, plus one add per output element for each bias. Batch-norm,
    activations, pooling, residual adds and resampling cost nothing.
``mac2_full``
    ``mac2`` plus per-element costs for the other layers: batch_norm 2,
    relu 1, softmax 3, max/avg pool one op per window element per output,
    global_avg_pool one op per input element, add (k-1) per output element
    for k operands, upsample 1 per output element.
``macs``
    Multiply-accumulates only (no factor 2, no bias).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

from .graph.ir import LayerNode, ModelGraph, Shape, param_shapes, truncate_at

CONVENTIONS = ("mac2", "mac2_full", "macs")
DEFAULT_CONVENTION = "mac2"
BYTES_PER_VALUE = 4


@dataclass(frozen=True)
class CostRow:
    name: str
    kind: str
    output_shape: Shape
    params: int
    flops: int
    activation_bytes: int


@dataclass
class CostReport:
    rows: List[CostRow]
    convention: str
    total_params: int = field(init=False)
    total_flops: int = field(init=False)
    total_activation_bytes: int = field(init=False)

    def __post_init__(self):
        self.total_params = sum(r.params for r in self.rows)
        self.total_flops = sum(r.flops for r in self.rows)
        self.total_activation_bytes = sum(r.activation_bytes for r in self.rows)

    def to_csv(self) -> str:
        from .csvio import format_rows

        return format_rows(("name", "kind", "params", "flops"),
                           [(r.name, r.kind, r.params, r.flops) for r in self.rows])

    def to_text(self) -> str:
        width = max([len(r.name) for r in self.rows] + [4])
        lines = [f"{'name':<{width}}  {'kind':<16} {'output':<16} {'params':>12} {'flops':>16}"]
        for r in self.rows:
            shape = "x".join(map(str, r.output_shape))
            lines.append(f"{r.name:<{width}}  {r.kind:<16} {shape:<16} {r.params:>12,} {r.flops:>16,}")
        lines.append(f"total params {self.total_params:,}  flops {self.total_flops:,} ({self.convention})  "
                     f"activations {self.total_activation_bytes:,} bytes")
        return "\n".join(lines)


def _node_params(node: LayerNode, in_shapes: Sequence[Shape]) -> int:
    return sum(math.prod(s) for s in param_shapes(node, in_shapes).values())


def _node_flops(node: LayerNode, in_shapes: Sequence[Shape], out: Shape, convention: str) -> int:
    kind, a = node.kind, node.attrs
    out_elems = math.prod(out)
    macs = 0
    bias = 0
    if kind == "conv2d":
        kh, kw = a["kernel_size"]
        macs = kh * kw * in_shapes[0][-1] * out_elems
        bias = out_elems if a.get("use_bias", True) else 0
    elif kind == "depthwise_conv2d":
        kh, kw = a["kernel_size"]
        macs = kh * kw * out_elems
        bias = out_elems if a.get("use_bias", False) else 0
    elif kind == "dense":
        macs = in_shapes[0][0] * a["units"]
        bias = a["units"] if a.get("use_bias", True) else 0
    if convention == "macs":
        return macs
    flops = 2 * macs + bias
    if convention == "mac2_full":
        if kind == "batch_norm":
            flops += 2 * out_elems
        elif kind == "relu":
            flops += out_elems
        elif kind == "softmax":
            flops += 3 * out_elems
        elif kind in ("max_pool", "avg_pool"):
            ph, pw = a["pool_size"]
            flops += ph * pw * out_elems
        elif kind == "global_avg_pool":
            flops += math.prod(in_shapes[0])
        elif kind == "add":
            flops += (len(in_shapes) - 1) * out_elems
        elif kind == "upsample":
            flops += out_elems
    return flops


def cost_report(graph: ModelGraph, convention: str = DEFAULT_CONVENTION) -> CostReport:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown FLOPs convention {convention!r}; choose from {', '.join(CONVENTIONS)}")
    shapes = graph.shapes()
    needed = set(graph.ancestors(graph.output))
    rows = []
    for n in graph.nodes:
        if n.name not in needed:
            continue
        ins = [shapes[i] for i in n.inputs]
        out = shapes[n.name]
        rows.append(CostRow(n.name, n.kind, out, _node_params(n, ins), _node_flops(n, ins, out, convention),
                            BYTES_PER_VALUE * math.prod(out)))
    return CostReport(rows, convention)


def count_params(graph: ModelGraph) -> int:
    return cost_report(graph).total_params


def count_flops(graph: ModelGraph, convention: str = DEFAULT_CONVENTION) -> int:
    return cost_report(graph, convention).total_flops


def layer_costs(graph: ModelGraph, layers: Iterable[str], convention: str = DEFAULT_CONVENTION) -> Dict[str, Tuple[int, int]]:
    """(params, flops) of the graph truncated at each named layer."""
    out = {}
    for layer in layers:
        report = cost_report(truncate_at(graph, layer), convention)
        out[layer] = (report.total_params, report.total_flops)
    return out


@dataclass(frozen=True)
class SweepRow:
    width: int
    size: int
    params: int
    flops: int


def sweep(family: str, widths: Iterable[int], sizes: Iterable[int], classes: int = 12,
          convention: str = DEFAULT_CONVENTION) -> List[SweepRow]:
    """Cost of ``family`` for every (width, size) pair, widths varying fastest."""
    from .zoo import ArchSpec, build

    rows = []
    for size in sizes:
        for width in widths:
            g = build(ArchSpec(family, width, size, classes), seed=None)
            report = cost_report(g, convention)
            rows.append(SweepRow(width, size, report.total_params, report.total_flops))
    return rows


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    from .csvio import format_rows

    return format_rows(("width_param", "flops"), [(r.width, r.flops) for r in rows])
