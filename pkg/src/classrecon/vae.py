"""VAE baseline: train on the visible pool, then fine-tune a latent code
against the attacked classifier to reconstruct a target class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpointing import ModelCheckpoint
from .classifiers import _coerce_model
from .data import FaceDataset
from .errors import NumericalError
from .results import AttackResult


@dataclass(frozen=True)
class VaeSpec:
    latent_dim: int = 64
    base_width: int = 32
    kl_weight: float = 1e-3
    image_size: int = 64
    epochs: int = 60
    batch_size: int = 16
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be > 0")


class VaeModel(nn.Module):
    """Convolutional encoder to (mu, log_sigma), mirrored decoder with tanh output."""

    def __init__(self, spec: VaeSpec):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        s = spec.image_size // 4
        self._bottleneck = (2 * w, s, s)

        self.enc = nn.Sequential(
            nn.Conv2d(1, w, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(w, 2 * w, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Flatten(),
        )
        flat = 2 * w * s * s
        self.to_mu = nn.Linear(flat, spec.latent_dim)
        self.to_log_sigma = nn.Linear(flat, spec.latent_dim)

        self.from_latent = nn.Linear(spec.latent_dim, flat)
        self.dec = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, w, 3, padding=1),
            nn.ReLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(w, w, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(w, 1, 3, padding=1),
        )

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.enc(x)
        return self.to_mu(h), self.to_log_sigma(h)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.from_latent(z)).reshape(z.shape[0], *self._bottleneck)
        return torch.tanh(self.dec(h))

    def forward(self, x: torch.Tensor, eps: torch.Tensor):
        mu, log_sigma = self.encode(x)
        z = reparameterize(mu, log_sigma, eps)
        return self.decode(z), mu, log_sigma

    def arch_metadata(self) -> dict:
        return {
            "arch": "vae",
            "latent_dim": self.spec.latent_dim,
            "base_width": self.spec.base_width,
            "kl_weight": self.spec.kl_weight,
            "image_size": self.spec.image_size,
        }


def vae_from_checkpoint(ckpt: ModelCheckpoint) -> VaeModel:
    meta = ckpt.metadata
    spec = VaeSpec(
        latent_dim=meta["latent_dim"],
        base_width=meta["base_width"],
        kl_weight=meta["kl_weight"],
        image_size=meta["image_size"],
    )
    model = VaeModel(spec)
    ckpt.load_into(model)
    model.eval()
    return model


def reparameterize(mu: torch.Tensor, log_sigma: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """z = mu + sigma * eps; reproduces mu exactly at eps = 0."""
    return mu + torch.exp(log_sigma) * eps


def kl_to_standard_normal(mu: torch.Tensor, log_sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag(sigma^2)) || N(0, I)), summed over latent dims, per sample."""
    return (0.5 * (mu**2 + torch.exp(2 * log_sigma) - 1.0) - log_sigma).sum(dim=1)


def encode(vae: VaeModel | ModelCheckpoint, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior parameters (mu, log_sigma) for one canonical-range image."""
    model = vae if isinstance(vae, VaeModel) else vae_from_checkpoint(vae)
    x = torch.as_tensor(image, dtype=torch.float32)
    if x.shape[-2:] != (model.spec.image_size, model.spec.image_size):
        raise ValueError(f"expected {model.spec.image_size}x{model.spec.image_size} input, got {tuple(x.shape)}")
    with torch.no_grad():
        mu, log_sigma = model.encode(x[None, None])
    return mu[0].numpy(), log_sigma[0].numpy()


def decode(vae: VaeModel | ModelCheckpoint, z: np.ndarray) -> np.ndarray:
    model = vae if isinstance(vae, VaeModel) else vae_from_checkpoint(vae)
    with torch.no_grad():
        out = model.decode(torch.as_tensor(z, dtype=torch.float32)[None])
    return out[0, 0].numpy()


def train_vae(pool: FaceDataset, spec: VaeSpec, seed: int) -> tuple[ModelCheckpoint, list[float]]:
    """Minimize per-pixel reconstruction MSE plus kl_weight * KL; deterministic per seed."""
    torch.manual_seed(seed)
    model = VaeModel(spec)
    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    rng = np.random.default_rng(seed)

    images = torch.as_tensor(pool.images, dtype=torch.float32)[:, None]
    trace: list[float] = []
    for epoch in range(spec.epochs):
        order = rng.permutation(len(pool))
        losses = []
        for start in range(0, len(order), spec.batch_size):
            idx = order[start : start + spec.batch_size]
            x = images[idx]
            eps = torch.as_tensor(
                rng.standard_normal((len(idx), spec.latent_dim)), dtype=torch.float32
            )
            optimizer.zero_grad()
            recon, mu, log_sigma = model(x, eps)
            loss = F.mse_loss(recon, x) + spec.kl_weight * kl_to_standard_normal(mu, log_sigma).mean()
            if not torch.isfinite(loss):
                raise NumericalError(f"VAE training diverged at epoch {epoch}, offset {start}")
            loss.backward()
            optimizer.step()
            losses.append(float(loss))
        trace.append(float(np.mean(losses)))

    meta = model.arch_metadata()
    meta.update({"seed": seed, "epochs": spec.epochs, "final_loss": trace[-1] if trace else None})
    return ModelCheckpoint.from_module(model, metadata=meta), trace


@dataclass(frozen=True)
class LatentAttackConfig:
    target: int
    learning_rate: float = 0.05
    max_iterations: int = 200
    stop_loss: float = 0.05
    init: str = "pool"  # or "prior"
    backtracking: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.init not in ("pool", "prior"):
            raise ValueError(f"init must be 'pool' or 'prior', got {self.init!r}")


def latent_attack(
    vae: VaeModel | ModelCheckpoint,
    classifier,
    pool: FaceDataset | None,
    cfg: LatentAttackConfig,
) -> AttackResult:
    """Gradient-descend CE(C(decode(z)), target) over the latent code only.

    The warm start is the encoding mean of a random visible-pool image;
    `init='prior'` starts from a standard-normal draw instead.
    """
    model = vae if isinstance(vae, VaeModel) else vae_from_checkpoint(vae)
    model.eval()
    clf = _coerce_model(classifier)
    clf.eval()
    attacked_checksum = (
        classifier.checksum()
        if isinstance(classifier, ModelCheckpoint)
        else ModelCheckpoint.from_module(clf).checksum()
    )

    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "pool":
        if pool is None or len(pool) == 0:
            raise ValueError("init='pool' needs a non-empty visible pool")
        pick = int(rng.integers(len(pool)))
        mu, _ = encode(model, pool.images[pick])
        z = torch.as_tensor(mu, dtype=torch.float32)[None]
    else:
        z = torch.as_tensor(rng.standard_normal(model.spec.latent_dim), dtype=torch.float32)[None]

    y = torch.tensor([cfg.target])
    trace: list[float] = []
    conf_trace: list[float] = []
    diverged = False
    iterations = 0
    image = None

    for i in range(cfg.max_iterations + 1):
        z_leaf = z.detach().requires_grad_(True)
        out = model.decode(z_leaf)
        logits = clf(out)
        loss = F.cross_entropy(logits, y)
        if not torch.isfinite(loss):
            diverged = True
            break
        trace.append(float(loss))
        conf_trace.append(float(torch.softmax(logits.detach(), dim=1)[0, cfg.target]))
        image = out.detach()[0, 0].numpy()

        if float(loss) <= cfg.stop_loss or i == cfg.max_iterations:
            break
        (grad,) = torch.autograd.grad(loss, z_leaf)
        if not torch.isfinite(grad).all():
            diverged = True
            break

        step = cfg.learning_rate
        z_next = z.detach() - step * grad
        if cfg.backtracking:
            accepted = False
            for _ in range(10):
                with torch.no_grad():
                    trial = float(F.cross_entropy(clf(model.decode(z_next)), y))
                if np.isfinite(trial) and trial <= trace[-1]:
                    accepted = True
                    break
                step /= 2.0
                z_next = z.detach() - step * grad
            if not accepted:
                break
        z = z_next
        iterations = i + 1

    return AttackResult(
        method="vae",
        target=cfg.target,
        image=image if image is not None else np.zeros((model.spec.image_size,) * 2, dtype=np.float32),
        loss_trace=trace,
        iterations_run=iterations,
        attacked_confidence=conf_trace[-1] if conf_trace else 0.0,
        attacked_checksum=attacked_checksum,
        seeds={"latent": cfg.seed},
        diverged=diverged,
        info={"confidence_trace": conf_trace, "init": cfg.init},
    )
