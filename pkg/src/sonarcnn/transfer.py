"""Frozen-backbone transfer: features at a named layer, a one-vs-rest
linear SVM, the low-shot protocol and the AUSCC summary."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import ImageDataset, lowshot_indices, normalize
from .graph.execute import forward
from .graph.ir import ModelGraph, truncate_at
from .tensor.rng import make_rng

DEFAULT_SPC = (1, 5, 10, 20, 30, 40, 50)
DEFAULT_RUNS = 10


@dataclass
class FeatureMatrix:
    features: np.ndarray       # (N, D)
    labels: np.ndarray         # (N,)
    model_id: str
    layer: str

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError(f"features {self.features.shape} do not match {len(self.labels)} labels")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def save(self, path) -> None:
        np.savez(path, features=self.features, labels=self.labels, model_id=self.model_id, layer=self.layer)

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["features"], z["labels"], str(z["model_id"]), str(z["layer"]))


def extract_features(graph: ModelGraph, layer: str, ds: ImageDataset, pixel_mean: float,
                     batch_size: int = 64, model_id: str = "") -> FeatureMatrix:
    """Flattened inference-mode activations of ``layer`` for every image."""
    name = graph.resolve(layer)
    sub = truncate_at(graph, name)
    rows = []
    for lo in range(0, len(ds), batch_size):
        x = normalize(ds.images[lo:lo + batch_size], pixel_mean)
        out = x if name == sub.input.name else forward(sub, x)
        rows.append(out.reshape(len(out), -1))
    dim = int(np.prod(sub.shapes()[name]))
    feats = np.concatenate(rows) if rows else np.zeros((0, dim), np.float32)
    return FeatureMatrix(feats, ds.labels.copy(), model_id or graph.meta.get("family", ""), layer)


def raw_pixel_features(ds: ImageDataset, pixel_mean: float) -> FeatureMatrix:
    """Baseline: the normalised pixels themselves."""
    x = normalize(ds.images, pixel_mean)
    return FeatureMatrix(x.reshape(len(ds), -1), ds.labels.copy(), "raw-pixels", "input")


# ---------------------------------------------------------------- SVM

@dataclass
class SvmModel:
    weights: np.ndarray        # (K, D)
    bias: np.ndarray           # (K,)
    classes: np.ndarray        # (K,) label value of each row
    C: float = 1.0
    epochs: Optional[np.ndarray] = None       # dual sweeps used per class
    center: Optional[np.ndarray] = None       # standardisation, if enabled
    scale: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected features with {self.dim} columns, got shape {x.shape}")
        if self.center is not None:
            x = (x - self.center) / self.scale
        return x @ self.weights.T + self.bias


SVM_LOSSES = ("hinge", "squared_hinge")


def train_linear_svm(features: np.ndarray, labels: np.ndarray, C: float = 1.0, tol: float = 1e-4,
                     max_epochs: int = 1000, standardize: bool = False, loss: str = "hinge") -> SvmModel:
    """One-vs-rest L2-regularised linear SVMs (standard hinge by default,
    ``loss="squared_hinge"`` for the L2-loss variant).

    Each binary problem is solved in the dual by coordinate descent with a
    fixed sweep order (samples in input order), the bias being an extra
    constant-1 feature. A class stops once its projected-gradient spread
    drops to ``tol`` or after ``max_epochs`` sweeps. The classes share one
    Gram matrix and are updated side by side; a class that has converged
    is frozen, so the result equals solving each class separately.
    """
    if loss not in SVM_LOSSES:
        raise ValueError(f"unknown SVM loss {loss!r}; choose from {', '.join(SVM_LOSSES)}")
    if C <= 0:
        raise ValueError(f"C must be > 0, got {C}")
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise ValueError(f"features {x.shape} do not match {len(labels)} labels")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("an SVM needs at least two classes")
    center = scale = None
    if standardize:
        center = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        x = (x - center) / scale
    n, k = len(x), len(classes)
    y = np.where(labels[:, None] == classes[None, :], 1.0, -1.0)     # (n, K)
    gram = x @ x.T + 1.0
    # squared hinge: no upper bound on alpha, 1/(2C) added to the diagonal
    shift = 0.0 if loss == "hinge" else 1.0 / (2.0 * C)
    upper = C if loss == "hinge" else np.inf
    diag = np.diag(gram) + shift
    alpha = np.zeros((n, k))
    ay = np.zeros((n, k))          # alpha * y
    active = np.ones(k, dtype=bool)
    epochs = np.zeros(k, dtype=np.int64)
    for _ in range(max_epochs):
        if not active.any():
            break
        epochs[active] += 1
        pg_max = np.full(k, -np.inf)
        pg_min = np.full(k, np.inf)
        for i in range(n):
            if diag[i] <= 0:
                continue
            a = alpha[i]
            g = y[i] * (gram[i] @ ay) - 1.0 + shift * a
            pg = np.where(a <= 0, np.minimum(g, 0.0), np.where(a >= upper, np.maximum(g, 0.0), g))
            pg_max = np.where(active, np.maximum(pg_max, pg), pg_max)
            pg_min = np.where(active, np.minimum(pg_min, pg), pg_min)
            step = active & (np.abs(pg) > 1e-12)
            if step.any():
                new = np.where(step, np.clip(a - g / diag[i], 0.0, upper), a)
                alpha[i] = new
                ay[i] = new * y[i]
        active &= (pg_max - pg_min) > tol
    w_aug = ay.T @ np.hstack([x, np.ones((n, 1))])
    return SvmModel(w_aug[:, :-1], w_aug[:, -1], classes, C, epochs, center, scale)


def svm_predict(model: SvmModel, features: np.ndarray) -> np.ndarray:
    """Arg-max of the per-class scores; ties go to the lowest class index."""
    scores = model.decision_function(features)
    return model.classes[np.argmax(scores, axis=1)]


# ---------------------------------------------------------------- low-shot protocol

def compute_auscc(spc: Sequence[float], accuracy: Sequence[float]) -> float:
    """Trapezoidal area under accuracy(spc), divided by the spc range."""
    s = np.asarray(spc, dtype=np.float64)
    a = np.asarray(accuracy, dtype=np.float64)
    if s.shape != a.shape or s.ndim != 1:
        raise ValueError("spc and accuracy must be 1-D and of equal length")
    if len(s) < 2:
        raise ValueError("AUSCC needs at least two points")
    if np.any(np.diff(s) <= 0):
        raise ValueError("spc values must be strictly increasing")
    area = float(np.sum((a[1:] + a[:-1]) * np.diff(s)) / 2.0)
    return area / float(s[-1] - s[0])


@dataclass
class SampleComplexityCurve:
    spc: List[int]
    mean: List[float]
    std: List[float]
    runs: int
    raw: Dict[int, List[float]] = field(default_factory=dict)
    shortfall: Dict[int, Dict[int, int]] = field(default_factory=dict)   # spc -> class -> missing
    layer: str = ""
    model_id: str = ""

    @property
    def auscc(self) -> Optional[float]:
        return compute_auscc(self.spc, self.mean) if len(self.spc) >= 2 else None

    def to_csv(self) -> str:
        from .csvio import format_rows

        return format_rows(("spc", "accuracy", "std"), list(zip(self.spc, self.mean, self.std)))

    def to_json(self) -> str:
        report = {
            "model_id": self.model_id,
            "layer": self.layer,
            "runs": self.runs,
            "spc": self.spc,
            "accuracy_mean": self.mean,
            "accuracy_std": self.std,
            "raw_accuracy": {str(k): v for k, v in self.raw.items()},
            "shortfall": {str(k): {str(c): m for c, m in v.items()} for k, v in self.shortfall.items()},
            "auscc": self.auscc,
        }
        return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _lowshot_cell(args) -> Tuple[int, int, float, Dict[int, int]]:
    spc, run, seed, x_train, y_train, x_test, y_test, C, standardize, loss = args
    draw = lowshot_indices(y_train, spc, make_rng(seed, spc, run), int(y_train.max()) + 1)
    model = train_linear_svm(x_train[draw.indices], y_train[draw.indices], C=C, standardize=standardize, loss=loss)
    acc = float(np.mean(svm_predict(model, x_test) == y_test))
    return spc, run, acc, draw.shortfall


def run_lowshot(train: FeatureMatrix, test: FeatureMatrix, spc_list: Sequence[int] = DEFAULT_SPC,
                runs: int = DEFAULT_RUNS, seed: int = 0, C: float = 1.0, standardize: bool = False,
                jobs: int = 1, loss: str = "hinge") -> SampleComplexityCurve:
    """For each spc and run: draw spc training samples per class, fit the
    SVM and score it on the whole test set. Every (spc, run) cell seeds its
    own generator, so serial and parallel execution agree."""
    spc_list = [int(s) for s in spc_list]
    if any(b <= a for a, b in zip(spc_list, spc_list[1:])):
        raise ValueError("spc list must be strictly increasing")
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if train.dim != test.dim:
        raise ValueError(f"train features have {train.dim} columns, test features {test.dim}")
    cells = [(s, r, seed, train.features, train.labels, test.features, test.labels, C, standardize, loss)
             for s in spc_list for r in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_lowshot_cell, cells))
    else:
        results = [_lowshot_cell(c) for c in cells]
    raw: Dict[int, List[float]] = {s: [0.0] * runs for s in spc_list}
    shortfall: Dict[int, Dict[int, int]] = {}
    for spc, run, acc, short in results:
        raw[spc][run] = acc
        if short:
            shortfall[spc] = short
    mean = [float(np.mean(raw[s])) for s in spc_list]
    std = [float(np.std(raw[s])) for s in spc_list]
    return SampleComplexityCurve(spc_list, mean, std, runs, raw, shortfall, train.layer, train.model_id)
