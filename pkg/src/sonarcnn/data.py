"""Single-channel image datasets: loading, normalisation, augmentation,
splits and a synthetic sonar-like generator.

Images are stored as 8-bit ``(N, s, s)`` arrays and only converted to
real numbers by :func:`normalize`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .tensor.rng import make_rng

IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".pgm")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ImageDataset:
    images: np.ndarray          # (N, s, s) uint8
    labels: np.ndarray          # (N,) int64
    class_names: Tuple[str, ...]
    object_ids: np.ndarray      # (N,) str
    seq_index: np.ndarray       # (N,) capture order within each object

    def __post_init__(self):
        n = len(self.images)
        if self.images.ndim != 3 or self.images.dtype != np.uint8:
            raise DatasetError(f"images must be an (N, s, s) uint8 array, got {self.images.dtype} {self.images.shape}")
        for name in ("labels", "object_ids", "seq_index"):
            if len(getattr(self, name)) != n:
                raise DatasetError(f"{name} has {len(getattr(self, name))} entries for {n} images")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError("label out of range of class_names")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def size(self) -> int:
        return self.images.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices) -> "ImageDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ImageDataset(self.images[idx], self.labels[idx], self.class_names, self.object_ids[idx],
                            self.seq_index[idx])

    def tensor(self, pixel_mean: float, dtype=np.float32) -> np.ndarray:
        """Normalised ``(N, s, s, 1)`` array ready for a model."""
        return normalize(self.images, pixel_mean, dtype)


def _natural_key(path: Path):
    stem = path.stem
    return (0, int(stem), stem) if stem.isdigit() else (1, 0, stem)


def _read_gray(path: Path, size: int) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise DatasetError(f"{path}: expected an 8-bit grayscale image, got mode {img.mode!r}")
            if img.size != (size, size):
                img = img.resize((size, size), Image.BILINEAR)
            return np.asarray(img, dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetError(f"{path}: unreadable image ({exc})") from None


def load_dataset(root, size: int) -> ImageDataset:
    """Load ``root/<class>/<object_id>/<seq_index>.png`` resized to ``size``.

    Ordering is (class, object, sequence) with classes and objects sorted
    by name and frames by their numeric file stem. Images placed directly
    in a class directory form a single object named after the class.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"{root}: no class directories")
    images, labels, objects, seqs = [], [], [], []
    for label, cdir in enumerate(class_dirs):
        groups: List[Tuple[str, List[Path]]] = []
        loose = sorted((p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=_natural_key)
        if loose:
            groups.append((cdir.name, loose))
        for odir in sorted(p for p in cdir.iterdir() if p.is_dir()):
            frames = sorted((p for p in odir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=_natural_key)
            if frames:
                groups.append((f"{cdir.name}/{odir.name}", frames))
        if not groups:
            raise DatasetError(f"class {cdir.name!r} has no images")
        for obj, frames in groups:
            for order, path in enumerate(frames):
                images.append(_read_gray(path, size))
                labels.append(label)
                objects.append(obj)
                seqs.append(order)
    return ImageDataset(np.stack(images), np.asarray(labels, dtype=np.int64), tuple(p.name for p in class_dirs),
                        np.asarray(objects, dtype=str), np.asarray(seqs, dtype=np.int64))


def compute_pixel_mean(ds: ImageDataset) -> float:
    """Mean of every training pixel (8-bit units)."""
    return float(ds.images.mean(dtype=np.float64))


def normalize(x: np.ndarray, pixel_mean: float, dtype=np.float32) -> np.ndarray:
    """Subtract the scalar pixel mean; no rescaling. Adds a channel axis to
    ``(N, s, s)`` or ``(s, s)`` input."""
    out = np.asarray(x, dtype=dtype) - np.asarray(pixel_mean, dtype=dtype)
    if out.ndim in (2, 3) and (out.ndim == 2 or out.shape[-1] != 1):
        out = out[..., None]
    return out


def denormalize(x: np.ndarray, pixel_mean: float) -> np.ndarray:
    return x + np.asarray(pixel_mean, dtype=x.dtype)


@dataclass(frozen=True)
class AugmentConfig:
    shift_fraction: float = 0.1
    flip_ud: float = 0.5
    flip_lr: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.shift_fraction < 1:
            raise ValueError(f"shift_fraction must lie in [0, 1), got {self.shift_fraction}")
        for p in (self.flip_ud, self.flip_lr):
            if not 0 <= p <= 1:
                raise ValueError(f"flip probability must lie in [0, 1], got {p}")


def shift_image(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate by (dy, dx) pixels with zero fill; positive moves down/right."""
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    if abs(dy) >= h or abs(dx) >= w:
        return out
    src_y = slice(max(-dy, 0), h - max(dy, 0))
    dst_y = slice(max(dy, 0), h - max(-dy, 0))
    src_x = slice(max(-dx, 0), w - max(dx, 0))
    dst_x = slice(max(dx, 0), w - max(-dx, 0))
    out[dst_y, dst_x] = img[src_y, src_x]
    return out


def augment(x: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random shift (magnitude in [0, fraction*extent], random sign, zero
    fill) followed by independent up-down and left-right flips.

    ``x`` is one image ``(s, s)`` / ``(s, s, 1)`` or a batch ``(N, s, s)`` /
    ``(N, s, s, 1)``; a batch draws independent parameters per image.
    """
    single = x.ndim == 2 or (x.ndim == 3 and x.shape[-1] == 1)
    batch = x[None] if single else x
    out = np.empty_like(batch)
    h, w = batch.shape[1], batch.shape[2]
    max_dy = int(math.floor(config.shift_fraction * h))
    max_dx = int(math.floor(config.shift_fraction * w))
    for i in range(len(batch)):
        dy = int(rng.integers(0, max_dy + 1)) * (1 if rng.random() < 0.5 else -1)
        dx = int(rng.integers(0, max_dx + 1)) * (1 if rng.random() < 0.5 else -1)
        img = shift_image(batch[i], dy, dx) if (dy or dx) else batch[i]
        if rng.random() < config.flip_ud:
            img = img[::-1]
        if rng.random() < config.flip_lr:
            img = img[:, ::-1]
        out[i] = img
    return out[0] if single else out


def _by_object(ds: ImageDataset) -> Dict[str, np.ndarray]:
    groups: Dict[str, List[int]] = {}
    for i, obj in enumerate(ds.object_ids):
        groups.setdefault(str(obj), []).append(i)
    return {k: np.asarray(v)[np.argsort(ds.seq_index[v], kind="stable")] for k, v in groups.items()}


def sequential_split_indices(ds: ImageDataset, fraction: float = 0.7) -> Tuple[np.ndarray, np.ndarray]:
    """Per object, the first ceil(fraction*n) frames in capture order go to
    train and the rest to test."""
    if not 0 < fraction < 1:
        raise ValueError(f"train fraction must lie in (0, 1), got {fraction}")
    train, test = [], []
    degenerate = []
    for obj, idx in _by_object(ds).items():
        k = math.ceil(fraction * len(idx))
        if k == len(idx):
            degenerate.append(obj)
        train.extend(idx[:k])
        test.extend(idx[k:])
    if degenerate:
        warnings.warn(f"{len(degenerate)} object(s) contribute no test frames (e.g. {degenerate[0]!r})", stacklevel=2)
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(test, dtype=np.int64))


def sequential_split(ds: ImageDataset, fraction: float = 0.7) -> Tuple[ImageDataset, ImageDataset]:
    train, test = sequential_split_indices(ds, fraction)
    return ds.subset(train), ds.subset(test)


def kfold(n, k: int = 5, seed: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold partition of ``range(n)`` (``n`` may be a dataset)."""
    n = len(n) if not isinstance(n, (int, np.integer)) else int(n)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples ({n})")
    perm = make_rng(seed, 0x4B).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(val)))
    return out


@dataclass(frozen=True)
class LowShotDraw:
    indices: np.ndarray
    shortfall: Dict[int, int] = field(default_factory=dict)   # class -> missing samples


def lowshot_indices(labels: np.ndarray, spc: int, rng: np.random.Generator,
                    num_classes: Optional[int] = None) -> LowShotDraw:
    """``spc`` indices per class, uniform without replacement. Classes with
    fewer samples are kept whole and their shortfall recorded."""
    if spc < 1:
        raise ValueError(f"spc must be >= 1, got {spc}")
    labels = np.asarray(labels)
    num_classes = int(labels.max()) + 1 if num_classes is None else num_classes
    chosen, shortfall = [], {}
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            raise DatasetError(f"class {c} has no samples")
        if len(members) <= spc:
            if len(members) < spc:
                shortfall[c] = spc - len(members)
            chosen.append(members)
        else:
            chosen.append(np.sort(rng.choice(members, size=spc, replace=False)))
    return LowShotDraw(np.concatenate(chosen), shortfall)


def lowshot_subsample(ds: ImageDataset, spc: int, rng: np.random.Generator) -> Tuple[ImageDataset, Dict[int, int]]:
    draw = lowshot_indices(ds.labels, spc, rng, ds.num_classes)
    return ds.subset(draw.indices), draw.shortfall


# ---------------------------------------------------------------- synthetic

SHAPES = ("disk", "ellipse", "bar", "ring", "pair", "cross")


def _shape_mask(kind: str, yy, xx, cy, cx, r, theta):
    c, s = math.cos(theta), math.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    if kind == "disk":
        return u * u + v * v <= r * r
    if kind == "ellipse":
        return (u / r) ** 2 + (v / (0.45 * r)) ** 2 <= 1
    if kind == "bar":
        return (np.abs(u) <= 1.3 * r) & (np.abs(v) <= 0.22 * r)
    if kind == "ring":
        d = u * u + v * v
        return (d <= r * r) & (d >= (0.6 * r) ** 2)
    if kind == "pair":
        return ((u - 0.6 * r) ** 2 + v * v <= (0.45 * r) ** 2) | ((u + 0.6 * r) ** 2 + v * v <= (0.45 * r) ** 2)
    # cross
    return ((np.abs(u) <= r) & (np.abs(v) <= 0.2 * r)) | ((np.abs(v) <= r) & (np.abs(u) <= 0.2 * r))


def synth_generate(classes: int, n_per_class: int, size: int = 32, seed: int = 0,
                   objects_per_class: int = 2, looks: float = 64.0, noise_std: float = 2.0,
                   blur: float = 1.0) -> ImageDataset:
    """Sonar-like toy images: one bright class-dependent shape per image
    with an acoustic shadow behind it (towards the bottom, i.e. far range)
    and multiplicative gamma speckle with ``looks`` looks (relative std
    1/sqrt(looks)) plus additive Gaussian noise. The clean scene is blurred
    with a Gaussian of ``blur`` pixels, mimicking the soft returns of a
    sonar beam pattern.

    Each class is split into ``objects_per_class`` objects whose frames
    rotate the shape step by step, like a turntable capture.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    from scipy.ndimage import gaussian_filter

    rng = make_rng(seed, 0x53)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    n_obj = max(1, min(objects_per_class, n_per_class))
    images, labels, objects, seqs = [], [], [], []
    for label in range(classes):
        kind = SHAPES[label % len(SHAPES)]
        scale = 1.0 + 0.35 * (label // len(SHAPES))
        for obj, frames in enumerate(np.array_split(np.arange(n_per_class), n_obj)):
            base_theta = rng.uniform(0, np.pi)
            brightness = rng.uniform(170, 230)
            for t in range(len(frames)):
                r = size * 0.16 * scale * rng.uniform(0.9, 1.1)
                cy = size * rng.uniform(0.35, 0.5)
                cx = size * rng.uniform(0.4, 0.6)
                theta = base_theta + t * np.pi / max(len(frames), 1)
                mask = _shape_mask(kind, yy, xx, cy, cx, r, theta)
                shadow = np.maximum.accumulate(mask, axis=0) & ~mask
                img = np.full((size, size), 28.0)
                img[mask] = brightness
                img[shadow] *= 0.25
                if blur > 0:
                    img = gaussian_filter(img, blur, mode="nearest")
                img *= rng.gamma(looks, 1.0 / looks, size=img.shape)
                img += rng.normal(0, noise_std, size=img.shape)
                images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
                labels.append(label)
                objects.append(f"class{label}/obj{obj}")
                seqs.append(t)
    return ImageDataset(np.stack(images), np.asarray(labels, dtype=np.int64),
                        tuple(f"class{i}" for i in range(classes)), np.asarray(objects, dtype=str),
                        np.asarray(seqs, dtype=np.int64))


def save_dataset(ds: ImageDataset, root) -> None:
    """Write ``ds`` in the directory layout read by :func:`load_dataset`."""
    from PIL import Image

    root = Path(root)
    for img, label, obj, seq in zip(ds.images, ds.labels, ds.object_ids, ds.seq_index):
        obj_name = str(obj).split("/")[-1]
        d = root / ds.class_names[label] / obj_name
        d.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(d / f"{int(seq):04d}.png")
