"""Training loops (Adam, cross-entropy or MSE), evaluation and the width
grid search with k-fold cross-validation."""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import AugmentConfig, ImageDataset, augment, compute_pixel_mean, kfold, normalize
from .graph.execute import backward, batch_norm_updates, forward, forward_train
from .graph.ir import ModelGraph, init_weights
from .tensor.kernels import BN_MOMENTUM, TRAINABLE
from .tensor.losses import cross_entropy, mse
from .tensor.optim import AdamState, adam_update
from .tensor.rng import derive_seed, make_rng


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 200
    batch_size: int = 32
    augment: Optional[AugmentConfig] = field(default_factory=AugmentConfig)
    pixel_mean: Optional[float] = None     # None: computed from the training set
    seed: int = 0
    # stop once inference-mode training accuracy reaches this value
    target_train_accuracy: Optional[float] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: Optional[float]
    val_accuracy: Optional[float]
    seconds: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    pixel_mean: float = 0.0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    def to_csv(self) -> str:
        from .csvio import format_rows

        def opt(v):
            return "" if v is None else v

        return format_rows(("epoch", "loss", "train_accuracy", "val_accuracy"),
                           [(r.epoch, r.loss, opt(r.train_accuracy), opt(r.val_accuracy)) for r in self.records])


def _trainable(graph: ModelGraph) -> Dict[Tuple[str, str], np.ndarray]:
    out = {}
    for node in graph.nodes:
        keys = TRAINABLE.get(node.kind, ())
        for key in keys:
            if node.name in graph.weights and key in graph.weights[node.name]:
                out[(node.name, key)] = graph.weights[node.name][key]
    return out


def _prepared(graph: ModelGraph, seed: int) -> ModelGraph:
    if graph.weights is None:
        return graph.copy(weights=init_weights(graph, seed))
    return graph.copy()


def _batch_input(images: np.ndarray, config: TrainConfig, mean: float, rng: np.random.Generator) -> np.ndarray:
    if config.augment is not None:
        images = augment(images, config.augment, rng)
    return normalize(images, mean)


def _fit(graph: ModelGraph, ds: ImageDataset, config: TrainConfig,
         loss_fn: Callable, target_fn: Callable, validation: Optional[ImageDataset],
         classify: bool) -> Tuple[ModelGraph, TrainLog]:
    graph = _prepared(graph, config.seed)
    mean = compute_pixel_mean(ds) if config.pixel_mean is None else float(config.pixel_mean)
    log = TrainLog(pixel_mean=mean)
    rng = make_rng(config.seed, 0x54)
    state = AdamState(learning_rate=config.learning_rate)
    n = len(ds)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            x = _batch_input(ds.images[idx], config, mean, rng)
            tape = forward_train(graph, x)
            value, grad = loss_fn(tape.output, target_fn(x, ds.labels[idx]))
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            pgrads, _ = backward(graph, tape, grad)
            params = _trainable(graph)
            grads = {k: pgrads[k[0]][k[1]] for k in params}
            new_params, state = adam_update(state, params, grads)
            for (name, key), arr in new_params.items():
                graph.weights[name][key] = arr
            for name, (bm, bv) in batch_norm_updates(tape).items():
                w = graph.weights[name]
                w["moving_mean"] = (BN_MOMENTUM * w["moving_mean"] + (1 - BN_MOMENTUM) * bm).astype(np.float32)
                w["moving_variance"] = (BN_MOMENTUM * w["moving_variance"] + (1 - BN_MOMENTUM) * bv).astype(np.float32)
            total_loss += value * len(idx)
            if classify:
                correct += int((tape.output.argmax(axis=1) == ds.labels[idx]).sum())
        train_acc = correct / n if classify else None
        val_acc = evaluate_accuracy(graph, validation, mean) if (classify and validation is not None) else None
        log.records.append(EpochRecord(epoch + 1, total_loss / n, train_acc, val_acc, time.perf_counter() - start))
        if classify and config.target_train_accuracy is not None:
            if evaluate_accuracy(graph, ds, mean) >= config.target_train_accuracy:
                break
    return graph, log


def train_classifier(graph: ModelGraph, ds: ImageDataset, config: TrainConfig = TrainConfig(),
                     validation: Optional[ImageDataset] = None) -> Tuple[ModelGraph, TrainLog]:
    """Train a softmax classifier with cross-entropy. Returns a new graph;
    the input graph's weights are left untouched."""
    classes = graph.shapes()[graph.output]
    if classes != (ds.num_classes,):
        raise ValueError(f"graph outputs {classes}, dataset has {ds.num_classes} classes")
    return _fit(graph, ds, config, cross_entropy, lambda x, y: y, validation, classify=True)


def train_autoencoder(graph: ModelGraph, ds: ImageDataset, config: TrainConfig = TrainConfig()
                      ) -> Tuple[ModelGraph, TrainLog]:
    """Train a reconstruction model with MSE against its (augmented,
    normalised) input."""
    if graph.meta.get("family") not in (None, "autoencoder"):
        raise ValueError(f"train_autoencoder needs an autoencoder, got {graph.meta.get('family')}")
    return _fit(graph, ds, config, mse, lambda x, y: x, None, classify=False)


def reconstruction_mse(graph: ModelGraph, ds: ImageDataset, pixel_mean: float, batch_size: int = 64) -> float:
    total = 0.0
    for lo in range(0, len(ds), batch_size):
        x = normalize(ds.images[lo:lo + batch_size], pixel_mean)
        total += float(np.square(forward(graph, x) - x, dtype=np.float64).sum())
    return total / (len(ds) * ds.size * ds.size)


def predict(graph: ModelGraph, ds: ImageDataset, pixel_mean: float, batch_size: int = 64) -> np.ndarray:
    outs = [forward(graph, normalize(ds.images[lo:lo + batch_size], pixel_mean))
            for lo in range(0, len(ds), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, graph.shapes()[graph.output][0]), np.float32)


def evaluate_accuracy(graph: ModelGraph, ds: ImageDataset, pixel_mean: float, batch_size: int = 64) -> float:
    """Top-1 accuracy in inference mode; ``argmax`` breaks ties towards the
    lowest class index."""
    if len(ds) == 0:
        return 0.0
    return float((predict(graph, ds, pixel_mean, batch_size).argmax(axis=1) == ds.labels).mean())


# ---------------------------------------------------------------- width search

SEARCH_EPOCHS = 50


@dataclass
class WidthStats:
    width: int
    fold_accuracies: List[float]
    failures: List[str] = field(default_factory=list)

    @property
    def acc_mean(self) -> float:
        return float(np.mean(self.fold_accuracies)) if self.fold_accuracies else float("nan")

    @property
    def acc_std(self) -> float:
        return float(np.std(self.fold_accuracies)) if self.fold_accuracies else float("nan")

    @property
    def acc_max(self) -> float:
        return float(np.max(self.fold_accuracies)) if self.fold_accuracies else float("nan")

    @property
    def acc_min(self) -> float:
        return float(np.min(self.fold_accuracies)) if self.fold_accuracies else float("nan")


@dataclass
class WidthSearchResult:
    family: str
    rows: List[WidthStats]

    @property
    def selected_width(self) -> int:
        best = None
        for r in sorted(self.rows, key=lambda r: r.width):
            if not r.fold_accuracies:
                continue
            if best is None or r.acc_mean > best.acc_mean:
                best = r
        if best is None:
            raise RuntimeError("every width search run failed")
        return best.width

    def to_csv(self) -> str:
        """Accuracies are written in percent, like the published plot data."""
        from .csvio import format_rows

        return format_rows(("width_param", "acc_mean", "acc_std", "acc_max", "acc_min"),
                           [(r.width, 100 * r.acc_mean, 100 * r.acc_std, 100 * r.acc_max, 100 * r.acc_min)
                            for r in sorted(self.rows, key=lambda r: r.width)])


def _search_cell(args):
    family, width, fold, classes, size, ds, train_idx, val_idx, config = args
    from .zoo import ArchSpec, build

    try:
        train, val = ds.subset(train_idx), ds.subset(val_idx)
        seed = derive_seed(config.seed, width, fold)
        cfg = replace(config, seed=seed)
        graph = build(ArchSpec(family, width, size, classes), seed=seed)
        graph, log = train_classifier(graph, train, cfg)
        return width, fold, evaluate_accuracy(graph, val, log.pixel_mean), None
    except Exception as exc:  # recorded per (width, fold); the search goes on
        return width, fold, None, f"{type(exc).__name__}: {exc}"


def width_search(family: str, widths: Sequence[int], ds: ImageDataset, k: int = 5,
                 config: Optional[TrainConfig] = None, jobs: int = 1) -> WidthSearchResult:
    """Train k models per width on fold-train splits and score them on the
    held-out folds. Cells run in parallel when ``jobs > 1``; every cell has
    its own seed derived from (base seed, width, fold) so the result does not
    depend on scheduling."""
    config = config or TrainConfig(epochs=SEARCH_EPOCHS)
    folds = kfold(len(ds), k, config.seed)
    cells = [(family, int(w), f, ds.num_classes, ds.size, ds, tr, va, config)
             for w in widths for f, (tr, va) in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_search_cell, cells))
    else:
        results = [_search_cell(c) for c in cells]
    rows = {int(w): WidthStats(int(w), []) for w in widths}
    for width, fold, acc, err in sorted(results, key=lambda r: (r[0], r[1])):
        if err is None:
            rows[width].fold_accuracies.append(acc)
        else:
            rows[width].failures.append(f"fold {fold}: {err}")
    return WidthSearchResult(family, [rows[w] for w in sorted(rows)])
