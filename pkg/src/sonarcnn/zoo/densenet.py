"""DenseNet121 with growth rate w, 4w bottlenecks and 0.5 compression."""
from __future__ import annotations

from ..graph.ir import GraphBuilder

BLOCKS = (6, 12, 24, 16)


def _conv_block(b: GraphBuilder, x: str, growth: int, prefix: str) -> str:
    y = b.relu(b.bn(x), alias=f"{prefix}_0_relu")
    y = b.relu(b.bn(b.conv(y, 4 * growth, 1, use_bias=False)), alias=f"{prefix}_1_relu")
    y = b.conv(y, growth, 3, use_bias=False)
    return b.layer("concat", (x, y), alias=f"{prefix}_concat")


def build_densenet121(b: GraphBuilder, width: int, classes: int) -> str:
    x = b.relu(b.bn(b.conv(b.input, 2 * width, 7, strides=2, use_bias=False)), alias="conv1_relu")
    x = b.max_pool(x, 3, strides=2, padding="same", alias="pool1")
    for stage, count in enumerate(BLOCKS, start=2):
        for i in range(1, count + 1):
            x = _conv_block(b, x, width, f"conv{stage}_block{i}")
        if stage < 5:
            channels = b.shape(x)[-1]
            x = b.relu(b.bn(x), alias=f"pool{stage}_relu")
            x = b.conv(x, channels // 2, 1, use_bias=False)
            x = b.avg_pool(x, 2, alias=f"pool{stage}_pool")
    x = b.relu(b.bn(x), alias="relu")
    x = b.layer("global_avg_pool", x, alias="avg_pool")
    return b.layer("softmax", b.dense(x, classes))
