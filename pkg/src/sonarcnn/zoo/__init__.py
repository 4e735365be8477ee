"""Builders for the six architecture families."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..graph.ir import GraphBuilder, ModelGraph, init_weights
from .autoencoder import build_autoencoder
from .densenet import build_densenet121
from .minixception import build_minixception
from .mobilenet import build_mobilenet
from .resnet import build_resnet20
from .squeezenet import build_squeezenet

CLASSIFIERS = ("resnet20", "mobilenet", "densenet121", "squeezenet", "minixception")
FAMILIES = CLASSIFIERS + ("autoencoder",)
INPUT_SIZES = (32, 48, 64, 80, 96)
CODE_SIZES = (4, 8, 16, 32, 64, 128)

# selected widths after 5-fold cross-validation on the turntable set;
# the autoencoder entry is the code size with the best transfer score
SELECTED_WIDTHS = {
    "resnet20": 32,
    "mobilenet": 32,
    "densenet121": 16,
    "squeezenet": 32,
    "minixception": 16,
    "autoencoder": 128,
}

# feature layers evaluated for transfer, best first
FEATURE_LAYERS = {
    "resnet20": ("flatten_5", "activation_93", "activation_91"),
    "mobilenet": ("conv_pw_11_relu", "flatten_5", "conv_pw_12_relu"),
    "densenet121": ("conv5_block15_0_relu", "conv5_block16_0_relu", "avg_pool"),
    "squeezenet": ("batch_norm_48", "batch_norm_49", "batch_norm_50"),
    "minixception": ("add_19", "add_18", "conv2d_35"),
    "autoencoder": ("enc_code",),
}


@dataclass(frozen=True)
class ArchSpec:
    family: str
    width: int
    input_size: int = 96
    classes: Optional[int] = 12

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unsupported family {self.family!r}; choose from {', '.join(FAMILIES)}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.family == "autoencoder":
            if self.width not in CODE_SIZES:
                raise ValueError(f"autoencoder code size must be one of {CODE_SIZES}, got {self.width}")
        elif self.classes is None or self.classes < 2:
            raise ValueError(f"{self.family} needs at least 2 classes, got {self.classes}")
        if self.input_size < 8:
            raise ValueError(f"input size must be >= 8, got {self.input_size}")


def build(spec: ArchSpec, seed: Optional[int] = 0) -> ModelGraph:
    """Build the graph for ``spec``; weights are initialised from ``seed``
    unless it is ``None`` (structure only)."""
    spec.validate()
    classes = None if spec.family == "autoencoder" else spec.classes
    meta = {"family": spec.family, "width": spec.width, "input_size": spec.input_size, "classes": classes}
    b = GraphBuilder((spec.input_size, spec.input_size, 1), meta)
    if spec.family == "resnet20":
        out = build_resnet20(b, spec.width, classes)
    elif spec.family == "mobilenet":
        out = build_mobilenet(b, spec.width, classes)
    elif spec.family == "densenet121":
        out = build_densenet121(b, spec.width, classes)
    elif spec.family == "squeezenet":
        out = build_squeezenet(b, spec.width, classes)
    elif spec.family == "minixception":
        out = build_minixception(b, spec.width, classes)
    else:
        out = build_autoencoder(b, spec.width, spec.input_size)
    graph = b.finish(out)
    if seed is not None:
        graph.weights = init_weights(graph, seed)
    return graph


def default_spec(family: str, input_size: int = 96, classes: int = 12) -> ArchSpec:
    if family not in SELECTED_WIDTHS:
        raise ValueError(f"unknown family {family!r}")
    return ArchSpec(family, SELECTED_WIDTHS[family], input_size, None if family == "autoencoder" else classes)


__all__ = ["ArchSpec", "build", "default_spec", "FAMILIES", "CLASSIFIERS", "INPUT_SIZES", "SELECTED_WIDTHS",
           "CODE_SIZES", "FEATURE_LAYERS"]
