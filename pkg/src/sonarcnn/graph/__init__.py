from .execute import Tape, backward, batch_norm_updates, forward, forward_train
from .ir import (GraphBuilder, GraphError, LayerNode, ModelGraph, ShapeTable, UnknownLayerError, infer_shapes,
                 init_weights, output_shape, param_shapes, truncate_at)
from .serialize import (ChecksumError, FormatError, TruncatedStreamError, VersionMismatchError, deserialize, load,
                        save, serialize)

__all__ = [
    "Tape", "backward", "batch_norm_updates", "forward", "forward_train", "GraphBuilder", "GraphError",
    "LayerNode", "ModelGraph", "ShapeTable", "UnknownLayerError", "infer_shapes", "init_weights",
    "output_shape", "param_shapes", "truncate_at", "ChecksumError", "FormatError", "TruncatedStreamError",
    "VersionMismatchError", "deserialize", "load", "save", "serialize",
]
