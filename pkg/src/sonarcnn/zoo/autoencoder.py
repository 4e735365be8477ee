"""Convolutional autoencoder with a dense code layer of size c.

Encoder: Conv(32)-Pool-Conv(16)-Pool-Conv(8)-Pool-Flatten-Dense(c).
Decoder: Dense(8*n*n)-Reshape(n, n, 8)-Conv(32)-Up-Conv(16)-Up-Conv(8)-Up-Conv(1)
with n = s/8. Decoder widths are kept exactly as listed even though they do
not mirror the encoder.
"""
from __future__ import annotations

from ..graph.ir import GraphBuilder


def build_autoencoder(b: GraphBuilder, code_size: int, input_size: int) -> str:
    if input_size % 8:
        raise ValueError(f"autoencoder input size must be divisible by 8, got {input_size}")
    x = b.input
    for filters in (32, 16, 8):
        x = b.max_pool(b.relu(b.conv(x, filters, 3)), 2)
    code = b.dense(b.layer("flatten", x), code_size, alias="enc_code")
    n = input_size // 8
    y = b.relu(b.dense(code, 8 * n * n))
    y = b.layer("reshape", y, target_shape=(n, n, 8))
    for filters in (32, 16, 8):
        y = b.layer("upsample", b.relu(b.conv(y, filters, 3)), factor=2)
    return b.conv(y, 1, 3, alias="reconstruction")
