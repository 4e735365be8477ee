"""SqueezeNet built from batch-normalised fire modules.

Fire(s): 1x1 squeeze with s filters, parallel 1x1 and 3x3 expands with 2s
filters each, concatenated and batch-normalised. Three stacks of 2, 2 and 4
fires with squeeze widths w, 2w, 4w; max-pooling between stacks.
"""
from __future__ import annotations

from ..graph.ir import GraphBuilder

STACKS = (2, 2, 4)


def _fire(b: GraphBuilder, x: str, squeeze: int) -> str:
    s = b.relu(b.conv(x, squeeze, 1))
    e1 = b.relu(b.conv(s, 2 * squeeze, 1))
    e3 = b.relu(b.conv(s, 2 * squeeze, 3))
    return b.bn(b.layer("concat", (e1, e3)))


def build_squeezenet(b: GraphBuilder, width: int, classes: int) -> str:
    x = b.max_pool(b.relu(b.conv(b.input, width, 3)), 2)
    fire_outputs = []
    for stack, count in enumerate(STACKS):
        if stack > 0:
            x = b.max_pool(x, 2)
        for _ in range(count):
            x = _fire(b, x, width * 2 ** stack)
            fire_outputs.append(x)
    for offset, alias in enumerate(("48", "49", "50")):
        target = fire_outputs[-3 + offset]
        b.alias(f"batch_norm_{alias}", target)
        b.alias(f"batch_normalization_{alias}", target)
    x = b.conv(x, classes, 1)
    return b.layer("softmax", b.layer("global_avg_pool", x))
