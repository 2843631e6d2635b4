"""DDPM core: variance schedule, forward noising, predictor training, ancestral sampling.

A sampling run is a pure fold of `denoise_step` from t=T down to 1; with a
fixed `NoisePath` it is a deterministic, differentiable function of the
initial noise, which is what the path attack exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpointing import ModelCheckpoint
from .data import FaceDataset
from .errors import NumericalError
from .unet import NoiseUnet


@dataclass(frozen=True)
class VarianceSchedule:
    """Per-step noise tables; index [t-1] holds the step-t value, t = 1..T.

    sigma is sqrt(beta), the simpler of the two standard sampling variances.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.beta)

    def coeffs(self, t: int) -> tuple[float, float, float, float]:
        """(alpha, alpha_bar, beta, sigma) at step t (1-based)."""
        if not 1 <= t <= self.steps:
            raise ValueError(f"step {t} outside 1..{self.steps}")
        i = t - 1
        return float(self.alpha[i]), float(self.alpha_bar[i]), float(self.beta[i]), float(self.sigma[i])


def build_schedule(
    steps: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    interpolation: str = "linear",
) -> VarianceSchedule:
    """Linear beta table in float64 with cumulative alpha products."""
    if interpolation != "linear":
        raise ValueError(f"unsupported interpolation {interpolation!r}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")

    beta = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alpha = 1.0 - beta
    return VarianceSchedule(
        beta=beta,
        alpha=alpha,
        alpha_bar=np.cumprod(alpha),
        sigma=np.sqrt(beta),
    )


@dataclass
class NoisePath:
    """One concrete realization of every stochastic draw in ancestral sampling.

    `x_init` is the starting Gaussian image; `injections[t-1]` is the noise
    added at step t. Regenerating from `seed` reproduces identical arrays.
    """

    x_init: np.ndarray
    injections: np.ndarray
    seed: int
    zero_final: bool = True

    @property
    def steps(self) -> int:
        return len(self.injections)


def sample_noise_path(
    shape: tuple[int, int],
    steps: int,
    seed: int,
    zero_final: bool = True,
    dtype=np.float32,
) -> NoisePath:
    """Draw (x_T, z_T..z_1) from a seeded generator; z_1 is zeroed by default."""
    rng = np.random.default_rng(seed)
    x_init = rng.standard_normal(shape).astype(dtype)
    injections = rng.standard_normal((steps, *shape)).astype(dtype)
    if zero_final and steps >= 1:
        injections[0] = 0.0
    return NoisePath(x_init=x_init, injections=injections, seed=seed, zero_final=zero_final)


def forward_noise(x: torch.Tensor, t: int, eps: torch.Tensor, sched: VarianceSchedule) -> torch.Tensor:
    """Noised input at step t: sqrt(abar_t) * x + sqrt(1 - abar_t) * eps."""
    if x.shape != eps.shape:
        raise ValueError(f"shape mismatch: x {tuple(x.shape)} vs eps {tuple(eps.shape)}")
    _, abar, _, _ = sched.coeffs(t)
    return float(np.sqrt(abar)) * x + float(np.sqrt(1.0 - abar)) * eps


def _forward_noise_batch(x: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, sched: VarianceSchedule) -> torch.Tensor:
    abar = torch.as_tensor(sched.alpha_bar, dtype=x.dtype)[t - 1]
    shape = (-1,) + (1,) * (x.ndim - 1)
    return abar.sqrt().reshape(shape) * x + (1.0 - abar).sqrt().reshape(shape) * eps


def denoise_step(
    x_t: torch.Tensor,
    t: int,
    z: torch.Tensor | None,
    predictor: nn.Module,
    sched: VarianceSchedule,
) -> torch.Tensor:
    """One reverse step: remove the predicted noise, then add sigma_t * z.

    Differentiable with respect to both x_t and z.
    """
    alpha, abar, _, sigma = sched.coeffs(t)
    eps = predictor(x_t, t)
    coef = float((1.0 - alpha) / np.sqrt(1.0 - abar))
    out = (x_t - coef * eps) / float(np.sqrt(alpha))
    if z is not None:
        out = out + sigma * z
    return out


def denoise_chain(
    x: torch.Tensor,
    injections: torch.Tensor,
    predictor: nn.Module,
    sched: VarianceSchedule,
    t_from: int | None = None,
    t_to: int = 1,
) -> torch.Tensor:
    """Fold denoise steps from t_from down to t_to (inclusive)."""
    t_from = sched.steps if t_from is None else t_from
    for t in range(t_from, t_to - 1, -1):
        x = denoise_step(x, t, injections[t - 1][None, None], predictor, sched)
    return x


def sample(predictor: nn.Module, sched: VarianceSchedule, path: NoisePath) -> np.ndarray:
    """Deterministic ancestral sample along a fixed noise path; output unclamped."""
    if path.steps != sched.steps:
        raise ValueError(f"path has {path.steps} injections for a {sched.steps}-step schedule")
    dtype = next(predictor.parameters()).dtype
    with torch.no_grad():
        x = torch.as_tensor(path.x_init, dtype=dtype)[None, None]
        for t in range(sched.steps, 0, -1):
            z = torch.as_tensor(path.injections[t - 1], dtype=dtype)[None, None]
            x = denoise_step(x, t, z, predictor, sched)
            if not torch.isfinite(x).all():
                raise NumericalError(f"non-finite sample values at step {t}")
    return x[0, 0].numpy()


@dataclass(frozen=True)
class DiffusionTrainConfig:
    epochs: int = 150
    batch_size: int = 16
    learning_rate: float = 2e-4
    base_width: int = 32
    emb_dim: int = 64


def train_diffusion(
    pool: FaceDataset,
    sched: VarianceSchedule,
    config: DiffusionTrainConfig,
    seed: int,
) -> tuple[ModelCheckpoint, list[float]]:
    """Fit the noise predictor on the visible pool; returns (checkpoint, per-epoch loss)."""
    torch.manual_seed(seed)
    model = NoiseUnet(base_width=config.base_width, emb_dim=config.emb_dim)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(seed)

    images = torch.as_tensor(pool.images, dtype=torch.float32)[:, None]
    trace: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(pool))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            x0 = images[idx]
            t = torch.as_tensor(rng.integers(1, sched.steps + 1, size=len(idx)))
            eps = torch.as_tensor(rng.standard_normal(x0.shape), dtype=torch.float32)
            x_t = _forward_noise_batch(x0, t, eps, sched)

            optimizer.zero_grad()
            loss = F.mse_loss(model(x_t, t), eps)
            if not torch.isfinite(loss):
                raise NumericalError(f"diffusion training diverged at epoch {epoch}, offset {start}")
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss))
        trace.append(float(np.mean(epoch_losses)))

    meta = model.arch_metadata()
    meta.update({"seed": seed, "epochs": config.epochs, "final_loss": trace[-1] if trace else None})
    return ModelCheckpoint.from_module(model, metadata=meta), trace


@torch.no_grad()
def noise_prediction_mse(predictor: nn.Module, pool: FaceDataset, sched: VarianceSchedule, seed: int = 0) -> tuple[float, float]:
    """Probe: (per-pixel MSE of the predictor, variance of the drawn noise)."""
    rng = np.random.default_rng(seed)
    x0 = torch.as_tensor(pool.images, dtype=torch.float32)[:, None]
    t = torch.as_tensor(rng.integers(1, sched.steps + 1, size=len(pool)))
    eps = torch.as_tensor(rng.standard_normal(x0.shape), dtype=torch.float32)
    x_t = _forward_noise_batch(x0, t, eps, sched)
    mse = float(F.mse_loss(predictor(x_t, t), eps))
    return mse, float(eps.var())
