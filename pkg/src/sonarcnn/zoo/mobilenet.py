"""MobileNet (v1) with 13 depthwise-separable blocks.

Pointwise widths are w, 2w, 4w, 4w, 8w, 8w, 16w (x6), 32w, 32w after a
stride-2 stem of w filters; w=32 is the classic layout.
"""
from __future__ import annotations

from ..graph.ir import GraphBuilder

BLOCKS = ((2, 1), (4, 2), (4, 1), (8, 2), (8, 1), (16, 2),
          (16, 1), (16, 1), (16, 1), (16, 1), (16, 1), (32, 2), (32, 1))


def build_mobilenet(b: GraphBuilder, width: int, classes: int) -> str:
    x = b.relu(b.bn(b.conv(b.input, width, 3, strides=2, use_bias=False)), alias="conv1_relu")
    for i, (mult, strides) in enumerate(BLOCKS, start=1):
        x = b.relu(b.bn(b.depthwise(x, 3, strides=strides)), alias=f"conv_dw_{i}_relu")
        x = b.relu(b.bn(b.conv(x, mult * width, 1, use_bias=False)), alias=f"conv_pw_{i}_relu")
    features = b.layer("flatten", b.layer("global_avg_pool", x), alias="flatten_5")
    return b.layer("softmax", b.dense(features, classes))
