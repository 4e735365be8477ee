from .kernels import (KERNELS, LAYER_KINDS, TRAINABLE, ShapeError, backward_layer, conv_output_size,
                      forward_layer, same_pads)
from .losses import cross_entropy, loss, mse
from .optim import AdamState, adam_update
from .rng import make_rng, derive_seed

__all__ = [
    "KERNELS", "LAYER_KINDS", "TRAINABLE", "ShapeError", "backward_layer", "conv_output_size",
    "forward_layer", "same_pads", "cross_entropy", "loss", "mse", "AdamState", "adam_update",
    "make_rng", "derive_seed",
]
