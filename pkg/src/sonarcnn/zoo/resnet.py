"""ResNet20: CIFAR-style v1 network, 3 stacks of 3 basic residual blocks."""
from __future__ import annotations

from ..graph.ir import GraphBuilder


def build_resnet20(b: GraphBuilder, width: int, classes: int, blocks_per_stack: int = 3) -> str:
    x = b.relu(b.bn(b.conv(b.input, width, 3)))
    mid_relus = []
    for stack in range(3):
        filters = width * 2 ** stack
        for block in range(blocks_per_stack):
            strides = 2 if stack > 0 and block == 0 else 1
            y = b.relu(b.bn(b.conv(x, filters, 3, strides=strides)))
            mid_relus.append(y)
            y = b.bn(b.conv(y, filters, 3))
            if strides != 1:
                x = b.conv(x, filters, 1, strides=strides)
            x = b.relu(b.layer("add", (x, y)))
    features = b.layer("flatten", b.layer("global_avg_pool", x), alias="flatten_5")
    b.alias("activation_93", mid_relus[-1])
    b.alias("activation_91", mid_relus[-2])
    return b.layer("softmax", b.dense(features, classes))
