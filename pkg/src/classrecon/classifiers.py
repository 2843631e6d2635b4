"""Victim classifiers: the 2-layer CNN, the VGG11 column, and the pixel-space baseline."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpointing import ModelCheckpoint
from .data import FaceDataset
from .errors import NumericalError
from .results import AttackResult

ARCHS = ("cnn2", "vgg11")
_VGG11_COLUMN = (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M")


@dataclass(frozen=True)
class ClassifierSpec:
    arch: str
    image_size: int = 64
    num_classes: int = 40
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")


def build_model(arch: str, image_size: int = 64, num_classes: int = 40) -> nn.Module:
    """Instantiate one of the two victim recipes (or a 1-logit head variant)."""
    if arch == "cnn2":
        spatial = image_size // 4
        return nn.Sequential(
            nn.Conv2d(1, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Flatten(),
            nn.Linear(64 * spatial * spatial, num_classes),
        )
    if arch == "vgg11":
        layers: list[nn.Module] = []
        in_ch = 1
        for v in _VGG11_COLUMN:
            if v == "M":
                layers.append(nn.MaxPool2d(2))
            else:
                layers += [nn.Conv2d(in_ch, v, 3, padding=1), nn.ReLU()]
                in_ch = v
        spatial = image_size // 32
        head = [nn.Flatten(), nn.Linear(512 * spatial * spatial, 512), nn.ReLU(), nn.Linear(512, num_classes)]
        return nn.Sequential(*layers, *head)
    raise ValueError(f"unknown arch {arch!r}")


def model_from_checkpoint(ckpt: ModelCheckpoint) -> nn.Module:
    meta = ckpt.metadata
    model = build_model(meta["arch"], meta.get("image_size", 64), meta.get("num_classes", 40))
    ckpt.load_into(model)
    model.eval()
    return model


def _as_batch(images: np.ndarray | torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(images, dtype=torch.float32)
    if t.ndim == 2:
        t = t[None]
    return t[:, None, :, :]


def train_classifier(
    spec: ClassifierSpec,
    train: FaceDataset,
    val: FaceDataset,
    seed: int,
) -> tuple[ModelCheckpoint, dict]:
    """Adam training with per-epoch top-1 tracking; returns the best-val-epoch weights.

    Deterministic for a fixed (spec, data, seed) on one machine.
    """
    torch.manual_seed(seed)
    model = build_model(spec.arch, spec.image_size, spec.num_classes)
    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate, weight_decay=spec.weight_decay)
    rng = np.random.default_rng(seed)

    x_train = _as_batch(train.images)
    y_train = torch.as_tensor(train.labels, dtype=torch.long)

    metrics: dict = {"train_top1": [], "val_top1": []}
    best_state = copy.deepcopy(model.state_dict())
    best_val = _accuracy(model, val)
    best_epoch = 0

    for epoch in range(1, spec.epochs + 1):
        model.train()
        order = rng.permutation(len(train))
        for start in range(0, len(order), spec.batch_size):
            idx = torch.as_tensor(order[start : start + spec.batch_size])
            optimizer.zero_grad()
            loss = F.cross_entropy(model(x_train[idx]), y_train[idx])
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"{spec.arch} training diverged: non-finite loss at epoch {epoch}, "
                    f"batch offset {start} (lr={spec.learning_rate})"
                )
            loss.backward()
            optimizer.step()

        train_acc = _accuracy(model, train)
        val_acc = _accuracy(model, val)
        metrics["train_top1"].append(train_acc)
        metrics["val_top1"].append(val_acc)
        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    metrics["best_epoch"] = best_epoch
    metrics["best_val_top1"] = best_val
    metrics["final_train_top1"] = metrics["train_top1"][-1] if metrics["train_top1"] else _accuracy(model, train)

    ckpt = ModelCheckpoint.from_module(
        model,
        metadata={
            "arch": spec.arch,
            "image_size": spec.image_size,
            "num_classes": spec.num_classes,
            "seed": seed,
            "epoch": best_epoch,
            "best_val_top1": best_val,
        },
    )
    return ckpt, metrics


@torch.no_grad()
def _accuracy(model: nn.Module, ds: FaceDataset, batch_size: int = 128) -> float:
    model.eval()
    hits = 0
    for start in range(0, len(ds), batch_size):
        logits = model(_as_batch(ds.images[start : start + batch_size])).numpy()
        # ties resolve to the lowest class id (np.argmax picks the first maximum)
        pred = np.argmax(logits, axis=1)
        hits += int((pred == ds.labels[start : start + batch_size]).sum())
    return hits / len(ds)


def _coerce_model(model_or_ckpt) -> nn.Module:
    if isinstance(model_or_ckpt, ModelCheckpoint):
        return model_from_checkpoint(model_or_ckpt)
    return model_or_ckpt


@torch.no_grad()
def predict_probs(model_or_ckpt, images: np.ndarray | torch.Tensor) -> np.ndarray:
    """Softmax class probabilities; (C,) for a single image, (N, C) for a batch."""
    model = _coerce_model(model_or_ckpt)
    model.eval()
    single = np.asarray(images).ndim == 2 if isinstance(images, np.ndarray) else images.ndim == 2
    probs = torch.softmax(model(_as_batch(images)), dim=1).numpy()
    return probs[0] if single else probs


def top1_accuracy(model_or_ckpt, ds: FaceDataset) -> float:
    """Argmax-match rate over a dataset; ties go to the lowest class id."""
    if len(ds) == 0:
        raise ValueError("top1_accuracy over an empty dataset")
    return _accuracy(_coerce_model(model_or_ckpt), ds)


def pixel_space_attack(
    ckpt: ModelCheckpoint,
    target: int,
    iters: int = 1000,
    step_size: float = 0.05,
    seed: int = 0,
    stop_confidence: float | None = None,
) -> AttackResult:
    """Gradient-descend target cross-entropy over raw pixels from Gaussian noise.

    Succeeds as an adversarial image (high attacked-classifier confidence)
    without ever looking like a face; this is the negative baseline.
    """
    model = model_from_checkpoint(ckpt)
    gen = torch.Generator().manual_seed(seed)
    size = ckpt.metadata.get("image_size", 64)
    x = torch.randn((1, 1, size, size), generator=gen)
    y = torch.tensor([target])

    trace: list[float] = []
    conf_trace: list[float] = []
    iterations = 0
    for i in range(iters + 1):
        x = x.detach().requires_grad_(True)
        logits = model(x)
        loss = F.cross_entropy(logits, y)
        if not torch.isfinite(loss):
            raise NumericalError(f"pixel attack diverged at iteration {i}")
        conf = float(torch.softmax(logits.detach(), dim=1)[0, target])
        trace.append(float(loss))
        conf_trace.append(conf)
        if i == iters or (stop_confidence is not None and conf >= stop_confidence):
            break
        (grad,) = torch.autograd.grad(loss, x)
        x = x.detach() - step_size * grad
        iterations = i + 1

    image = x.detach().numpy()[0, 0].astype(np.float32)
    return AttackResult(
        method="pixel",
        target=target,
        image=image,
        loss_trace=trace,
        iterations_run=iterations,
        attacked_confidence=conf_trace[-1],
        attacked_checksum=ckpt.checksum(),
        seeds={"init": seed},
        info={"confidence_trace": conf_trace},
    )
