"""MiniXception: two plain stem convolutions followed by four residual
modules of depthwise-separable convolutions, then a class-count conv and
global average pooling."""
from __future__ import annotations

from ..graph.ir import GraphBuilder


def _separable(b: GraphBuilder, x: str, filters: int) -> str:
    return b.conv(b.depthwise(x, 3), filters, 1, use_bias=False)


def build_minixception(b: GraphBuilder, width: int, classes: int) -> str:
    if width % 2:
        raise ValueError(f"minixception width must be even, got {width}")
    x = b.relu(b.bn(b.conv(b.input, width // 2, 3, use_bias=False)))
    x = b.relu(b.bn(b.conv(x, width, 3, use_bias=False)))
    adds = []
    for mult in (1, 2, 4, 8):
        filters = mult * width
        residual = b.bn(b.conv(x, filters, 1, strides=2, use_bias=False))
        y = b.relu(b.bn(_separable(b, x, filters)))
        y = b.bn(_separable(b, y, filters))
        last_main = y
        y = b.max_pool(y, 3, strides=2, padding="same")
        x = b.layer("add", (y, residual))
        adds.append(x)
    b.alias("add_18", adds[1])
    b.alias("add_19", adds[2])
    b.alias("conv2d_35", last_main)
    x = b.conv(x, classes, 3)
    return b.layer("softmax", b.layer("global_avg_pool", x))
