"""Face dataset ingestion, train/val splits, and the adversary-visibility scenario.

Images live everywhere in the canonical range [-1, 1] as float32; the two
accepted storage layouts hold values in [0, 1] (see `load_dataset`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError

CANONICAL_CLASSES = 40
CANONICAL_PER_CLASS = 10
CANONICAL_SIZE = 64
TRAIN_PER_CLASS = 7


def normalize(storage: np.ndarray) -> np.ndarray:
    """Map storage-range [0, 1] pixels to the canonical range [-1, 1]."""
    return (storage.astype(np.float32) * np.float32(2.0)) - np.float32(1.0)


def denormalize(canonical: np.ndarray) -> np.ndarray:
    """Map canonical [-1, 1] pixels back to storage range [0, 1]."""
    return (canonical.astype(np.float32) + np.float32(1.0)) / np.float32(2.0)


def to_uint8(canonical: np.ndarray) -> np.ndarray:
    """Clamp a canonical image and quantize it linearly to 8-bit grayscale."""
    clipped = np.clip(denormalize(canonical), 0.0, 1.0)
    return np.round(clipped * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class FaceDataset:
    """Index-aligned grayscale images and class labels.

    `images` has shape (N, H, W) float32 in [-1, 1]; `labels` has shape (N,)
    with class ids in [0, num_classes).
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 3:
            raise DatasetError(f"images must be (N, H, W), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DatasetError(
                f"labels shape {self.labels.shape} does not pair with {self.images.shape[0]} images"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def class_indices(self, class_id: int) -> np.ndarray:
        """Global indices of all images of one class, in dataset order."""
        return np.flatnonzero(self.labels == class_id)

    def subset(self, indices) -> "FaceDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return FaceDataset(self.images[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class AttackScenario:
    """Which classes are attack targets vs. adversary-visible, plus the 7/3 split.

    `train_index` / `val_index` map class id to per-class image ordinals
    (positions 0..9 within that class, not global indices).
    """

    train_index: dict[int, tuple[int, ...]]
    val_index: dict[int, tuple[int, ...]]
    target_classes: frozenset[int] = field(repr=False)
    visible_classes: frozenset[int] = field(repr=False)
    seed: int = 0


def load_dataset(path) -> FaceDataset:
    """Load the canonical 40-person face dataset from `path`.

    Two layouts are accepted:
      * a directory of ``class_<k>/img_<i>.pgm`` files, 64x64 8-bit grayscale;
      * a packed little-endian float32 file of shape 400x64x64 (row-major,
        values in [0, 1]) with a sidecar ``<path>.labels`` file of 400
        little-endian int32 class ids.

    Pixels are mapped linearly to [-1, 1] and rows are ordered by
    (class id, image index).
    """
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"dataset path does not exist: {p}")
    if p.is_dir():
        images, labels = _read_pgm_tree(p)
    else:
        images, labels = _read_packed(p)

    _validate_counts(labels)
    order = np.lexsort((np.arange(len(labels)), labels))
    return FaceDataset(normalize(images[order]), labels[order].astype(np.int64), CANONICAL_CLASSES)


def _read_pgm_tree(root: Path) -> tuple[np.ndarray, np.ndarray]:
    class_dirs = sorted(
        (d for d in root.iterdir() if d.is_dir() and d.name.startswith("class_")),
        key=lambda d: int(d.name.split("_")[1]),
    )
    if not class_dirs:
        raise DatasetError(f"no class_<k> directories under {root}")

    images, labels = [], []
    for class_id, d in enumerate(class_dirs):
        files = sorted(d.glob("img_*.pgm"), key=lambda f: int(f.stem.split("_")[1]))
        for f in files:
            img = np.asarray(Image.open(f))
            if img.shape != (CANONICAL_SIZE, CANONICAL_SIZE) or img.dtype != np.uint8:
                raise DatasetError(
                    f"{f}: expected {CANONICAL_SIZE}x{CANONICAL_SIZE} 8-bit grayscale, "
                    f"got shape {img.shape} dtype {img.dtype}"
                )
            images.append(img.astype(np.float32) / np.float32(255.0))
            labels.append(class_id)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def _read_packed(path: Path) -> tuple[np.ndarray, np.ndarray]:
    label_path = Path(str(path) + ".labels")
    if not label_path.exists():
        raise DatasetError(f"missing sidecar label file: {label_path}")

    n = CANONICAL_CLASSES * CANONICAL_PER_CLASS
    expected_bytes = n * CANONICAL_SIZE * CANONICAL_SIZE * 4
    raw = path.read_bytes()
    if len(raw) != expected_bytes:
        raise DatasetError(
            f"{path}: expected {expected_bytes} bytes "
            f"({n}x{CANONICAL_SIZE}x{CANONICAL_SIZE} float32), got {len(raw)}"
        )
    images = np.frombuffer(raw, dtype="<f4").reshape(n, CANONICAL_SIZE, CANONICAL_SIZE)
    if not np.isfinite(images).all() or images.min() < 0.0 or images.max() > 1.0:
        raise DatasetError(f"{path}: pixel values outside storage range [0, 1]")

    labels = np.frombuffer(label_path.read_bytes(), dtype="<i4")
    if labels.shape != (n,):
        raise DatasetError(f"{label_path}: expected {n} int32 labels, got {labels.shape[0]}")
    return images.astype(np.float32), labels.astype(np.int64)


def _validate_counts(labels: np.ndarray) -> None:
    counts = {int(c): int(n) for c, n in zip(*np.unique(labels, return_counts=True))}
    bad = {c: n for c, n in counts.items() if n != CANONICAL_PER_CLASS}
    if len(counts) != CANONICAL_CLASSES or bad:
        report = ", ".join(
            f"class {c}: {n} images (expected {CANONICAL_PER_CLASS})" for c, n in sorted(bad.items())
        )
        raise DatasetError(
            f"expected {CANONICAL_CLASSES} classes with {CANONICAL_PER_CLASS} images each, "
            f"found {len(counts)} classes{'; ' + report if report else ''}"
        )


def make_scenario(ds: FaceDataset, seed: int) -> AttackScenario:
    """Draw the per-class 7/3 train/val split and fix target vs. visible classes.

    Targets are the first half of the class ids (persons 1-20 when printed
    1-based), the visible pool is the second half.
    """
    rng = np.random.default_rng(seed)
    train_index: dict[int, tuple[int, ...]] = {}
    val_index: dict[int, tuple[int, ...]] = {}
    for class_id in range(ds.num_classes):
        n = len(ds.class_indices(class_id))
        perm = rng.permutation(n)
        k = min(TRAIN_PER_CLASS, n)
        train_index[class_id] = tuple(int(i) for i in sorted(perm[:k]))
        val_index[class_id] = tuple(int(i) for i in sorted(perm[k:]))

    half = ds.num_classes // 2
    return AttackScenario(
        train_index=train_index,
        val_index=val_index,
        target_classes=frozenset(range(half)),
        visible_classes=frozenset(range(half, ds.num_classes)),
        seed=seed,
    )


def _gather(ds: FaceDataset, per_class: dict[int, tuple[int, ...]], classes) -> FaceDataset:
    picked = []
    for class_id in sorted(classes):
        globals_ = ds.class_indices(class_id)
        picked.extend(globals_[list(per_class[class_id])])
    return ds.subset(picked)


def training_set(ds: FaceDataset, scenario: AttackScenario) -> FaceDataset:
    """The 7-per-class classifier training split over all classes."""
    return _gather(ds, scenario.train_index, range(ds.num_classes))


def validation_set(ds: FaceDataset, scenario: AttackScenario) -> FaceDataset:
    """The 3-per-class held-out split over all classes."""
    return _gather(ds, scenario.val_index, range(ds.num_classes))


def visible_pool(ds: FaceDataset, scenario: AttackScenario) -> FaceDataset:
    """All images of the adversary-visible classes (10 per class, 200 canonical)."""
    if not scenario.visible_classes:
        return ds.subset([])
    picked = np.concatenate([ds.class_indices(c) for c in sorted(scenario.visible_classes)])
    return ds.subset(picked)


def person_id(class_id: int) -> int:
    """1-based person number used in printed reports."""
    return class_id + 1
