"""Conditional-GAN reconstruction attack with the per-round dataset-rebuild protocol.

Each round: generate fakes, assemble a balanced real/fake batch, train the
discriminator on it, then train the generator against the frozen classifier
and the current discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpointing import ModelCheckpoint
from .classifiers import _coerce_model, build_model
from .data import FaceDataset
from .errors import NumericalError
from .results import AttackResult
from .unet import NoiseUnet


@dataclass(frozen=True)
class GanAttackConfig:
    target: int
    alpha: float = 1.0
    rounds: int = 40
    d_steps: int = 25
    g_steps: int = 10
    real_batch: int = 200
    fake_batch: int = 200
    minibatch: int = 32
    d_learning_rate: float = 2e-4
    g_learning_rate: float = 2e-4
    base_width: int = 32
    reinit_discriminator: bool = False
    plateau_rel_tol: float = 1e-3
    plateau_window: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.real_batch <= 0 or self.fake_batch <= 0:
            raise ValueError("batch sizes must be > 0")


@dataclass
class DiscriminatorBatch:
    """Images with binary labels: 1 = real (visible pool), 0 = generated."""

    images: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels must pair up")

    def __len__(self) -> int:
        return int(self.images.shape[0])


def generator_loss_terms(classifier, discriminator, generated: torch.Tensor, target: int):
    """(classifier CE toward the target, discriminator CE toward 'real')."""
    class_logits = classifier(generated)
    targets = torch.full((generated.shape[0],), target, dtype=torch.long)
    term_cls = F.cross_entropy(class_logits, targets)

    d_logits = discriminator(generated).reshape(-1)
    term_disc = F.binary_cross_entropy_with_logits(d_logits, torch.ones_like(d_logits))
    return term_cls, term_disc


def generator_loss(classifier, discriminator, generated: torch.Tensor, target: int, alpha: float):
    """Batch-mean attack loss: CE(C(g), target) + alpha * CE(D(g), real)."""
    term_cls, term_disc = generator_loss_terms(classifier, discriminator, generated, target)
    return term_cls + alpha * term_disc


def discriminator_accuracy(discriminator, batch: DiscriminatorBatch) -> float:
    """Binary accuracy at the 0.5 probability threshold."""
    if len(batch) == 0:
        raise ValueError("discriminator_accuracy over an empty batch")
    with torch.no_grad():
        logits = discriminator(batch.images).reshape(-1)
    pred = (logits > 0).to(batch.labels.dtype)
    return float((pred == batch.labels).float().mean())


def _make_noise(n: int, h: int, w: int, gen: torch.Generator) -> torch.Tensor:
    return torch.randn((n, 1, h, w), generator=gen)


def _assemble_batch(reals: torch.Tensor, fakes: torch.Tensor) -> DiscriminatorBatch:
    images = torch.cat([reals, fakes], dim=0)
    labels = torch.cat([torch.ones(reals.shape[0]), torch.zeros(fakes.shape[0])])
    return DiscriminatorBatch(images=images, labels=labels)


def train_attack_gan(classifier, pool: FaceDataset, cfg: GanAttackConfig) -> AttackResult:
    """Alternate discriminator/generator training until the attack loss plateaus.

    The classifier is read-only throughout; the result image is the
    best-of-batch fake by attacked-classifier confidence.
    """
    clf = _coerce_model(classifier)
    clf.eval()
    attacked_checksum = (
        classifier.checksum()
        if isinstance(classifier, ModelCheckpoint)
        else ModelCheckpoint.from_module(clf).checksum()
    )

    torch.manual_seed(cfg.seed)
    generator = NoiseUnet(base_width=cfg.base_width, step_conditioned=False, out_tanh=True)
    discriminator = build_model("cnn2", image_size=pool.height, num_classes=1)
    d_opt = torch.optim.Adam(discriminator.parameters(), lr=cfg.d_learning_rate, betas=(0.5, 0.999))
    g_opt = torch.optim.Adam(generator.parameters(), lr=cfg.g_learning_rate, betas=(0.5, 0.999))

    rng = np.random.default_rng(cfg.seed)
    pool_images = torch.as_tensor(pool.images, dtype=torch.float32)[:, None]
    h, w = pool.height, pool.width

    round_losses: list[float] = []
    for round_idx in range(cfg.rounds):
        round_gen = torch.Generator().manual_seed(int(rng.integers(2**63)))

        if cfg.reinit_discriminator and round_idx > 0:
            discriminator = build_model("cnn2", image_size=pool.height, num_classes=1)
            d_opt = torch.optim.Adam(discriminator.parameters(), lr=cfg.d_learning_rate, betas=(0.5, 0.999))

        generator.eval()
        with torch.no_grad():
            fakes = torch.cat(
                [
                    generator(_make_noise(min(64, cfg.fake_batch - i), h, w, round_gen))
                    for i in range(0, cfg.fake_batch, 64)
                ]
            )
        real_idx = rng.choice(len(pool), size=cfg.real_batch, replace=cfg.real_batch > len(pool))
        batch = _assemble_batch(pool_images[torch.as_tensor(real_idx)], fakes)

        discriminator.train()
        for _ in range(cfg.d_steps):
            idx = torch.as_tensor(rng.choice(len(batch), size=min(cfg.minibatch, len(batch)), replace=False))
            d_opt.zero_grad()
            logits = discriminator(batch.images[idx]).reshape(-1)
            d_loss = F.binary_cross_entropy_with_logits(logits, batch.labels[idx])
            if not torch.isfinite(d_loss):
                raise NumericalError(f"discriminator diverged at round {round_idx}")
            d_loss.backward()
            d_opt.step()

        generator.train()
        discriminator.eval()
        g_losses = []
        for _ in range(cfg.g_steps):
            g_opt.zero_grad()
            noise = _make_noise(cfg.minibatch, h, w, round_gen)
            loss = generator_loss(clf, discriminator, generator(noise), cfg.target, cfg.alpha)
            if not torch.isfinite(loss):
                raise NumericalError(f"generator diverged at round {round_idx}")
            loss.backward()
            g_opt.step()
            g_losses.append(float(loss))
        round_losses.append(float(np.mean(g_losses)))

        if _plateaued(round_losses, cfg.plateau_rel_tol, cfg.plateau_window):
            break

    generator.eval()
    final_gen = torch.Generator().manual_seed(cfg.seed + 1)
    with torch.no_grad():
        candidates = torch.cat(
            [
                generator(_make_noise(min(64, cfg.fake_batch - i), h, w, final_gen))
                for i in range(0, cfg.fake_batch, 64)
            ]
        )
        probs = torch.softmax(clf(candidates), dim=1)[:, cfg.target]
    best = int(torch.argmax(probs))

    return AttackResult(
        method="gan",
        target=cfg.target,
        image=candidates[best, 0].numpy().astype(np.float32),
        loss_trace=round_losses,
        iterations_run=len(round_losses),
        attacked_confidence=float(probs[best]),
        attacked_checksum=attacked_checksum,
        seeds={"gan": cfg.seed},
        info={"alpha": cfg.alpha, "rounds_config": cfg.rounds},
    )


def _plateaued(losses: list[float], rel_tol: float, window: int) -> bool:
    if len(losses) <= window:
        return False
    tail = losses[-(window + 1) :]
    return max(tail) - min(tail) <= rel_tol * max(abs(tail[-1]), 1e-12)
