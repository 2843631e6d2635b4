"""U-Net backbones: the step-conditioned noise predictor and the GAN generator variant."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .checkpointing import ModelCheckpoint


class SinusoidalStepEmbedding(nn.Module):
    """Classic sin/cos embedding of an integer step index."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        t = t.to(torch.float32).reshape(-1)
        half = self.dim // 2
        freqs = torch.exp(torch.arange(half, dtype=torch.float32) * (-math.log(10000.0) / max(half - 1, 1)))
        freqs = freqs.to(t.dtype if t.is_floating_point() else torch.float32)
        args = t[:, None] * freqs[None, :]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _group_norm(channels: int) -> nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


class ConvBlock(nn.Module):
    """Two 3x3 convs with GroupNorm/SiLU; the step embedding enters as a per-channel bias."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int | None = None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm1 = _group_norm(out_ch)
        self.norm2 = _group_norm(out_ch)
        self.emb_proj = nn.Linear(emb_dim, out_ch) if emb_dim else None

    def forward(self, x: torch.Tensor, emb: torch.Tensor | None = None) -> torch.Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        if self.emb_proj is not None and emb is not None:
            h = h + self.emb_proj(emb)[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class NoiseUnet(nn.Module):
    """Three-resolution U-Net with channel doubling and skip connections.

    With step conditioning enabled it predicts per-pixel noise from (x_t, t);
    without it, it maps a noise image to an image (the GAN generator, which
    adds a tanh so outputs live in the canonical pixel range).
    """

    def __init__(
        self,
        base_width: int = 32,
        emb_dim: int = 64,
        step_conditioned: bool = True,
        out_tanh: bool = False,
    ):
        super().__init__()
        self.base_width = base_width
        self.emb_dim = emb_dim
        self.step_conditioned = step_conditioned
        self.out_tanh = out_tanh

        ed = emb_dim if step_conditioned else None
        self.embed = SinusoidalStepEmbedding(emb_dim) if step_conditioned else None
        w = base_width
        self.down1 = ConvBlock(1, w, ed)
        self.down2 = ConvBlock(w, 2 * w, ed)
        self.down3 = ConvBlock(2 * w, 4 * w, ed)
        self.up2 = ConvBlock(4 * w + 2 * w, 2 * w, ed)
        self.up1 = ConvBlock(2 * w + w, w, ed)
        self.head = nn.Conv2d(w, 1, 1)

    def forward(self, x: torch.Tensor, t: torch.Tensor | int | None = None) -> torch.Tensor:
        emb = None
        if self.step_conditioned:
            if t is None:
                raise ValueError("step-conditioned U-Net needs a step index")
            if not torch.is_tensor(t):
                t = torch.full((x.shape[0],), int(t))
            emb = self.embed(t).to(x.dtype)

        h1 = self.down1(x, emb)
        h2 = self.down2(F.avg_pool2d(h1, 2), emb)
        h3 = self.down3(F.avg_pool2d(h2, 2), emb)
        u2 = self.up2(torch.cat([F.interpolate(h3, scale_factor=2, mode="nearest"), h2], dim=1), emb)
        u1 = self.up1(torch.cat([F.interpolate(u2, scale_factor=2, mode="nearest"), h1], dim=1), emb)
        out = self.head(u1)
        return torch.tanh(out) if self.out_tanh else out

    def arch_metadata(self) -> dict:
        return {
            "arch": "noise_unet",
            "base_width": self.base_width,
            "emb_dim": self.emb_dim,
            "step_conditioned": self.step_conditioned,
            "out_tanh": self.out_tanh,
        }


class SmallNoisePredictor(nn.Module):
    """Two-conv step-conditioned predictor for tiny numerical-check configurations."""

    def __init__(self, width: int = 8, emb_dim: int = 8):
        super().__init__()
        self.width = width
        self.emb_dim = emb_dim
        self.embed = SinusoidalStepEmbedding(emb_dim)
        self.conv1 = nn.Conv2d(1, width, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, width)
        self.conv2 = nn.Conv2d(width, 1, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor | int) -> torch.Tensor:
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t))
        emb = self.embed(t).to(x.dtype)
        h = F.silu(self.conv1(x) + self.emb_proj(emb)[:, :, None, None])
        return self.conv2(h)

    def arch_metadata(self) -> dict:
        return {"arch": "small_predictor", "width": self.width, "emb_dim": self.emb_dim}


def predictor_from_checkpoint(ckpt: ModelCheckpoint) -> nn.Module:
    meta = ckpt.metadata
    if meta.get("arch") == "small_predictor":
        model: nn.Module = SmallNoisePredictor(meta["width"], meta["emb_dim"])
    elif meta.get("arch") == "noise_unet":
        model = NoiseUnet(
            base_width=meta["base_width"],
            emb_dim=meta["emb_dim"],
            step_conditioned=meta["step_conditioned"],
            out_tanh=meta["out_tanh"],
        )
    else:
        raise ValueError(f"unknown predictor arch {meta.get('arch')!r}")
    ckpt.load_into(model)
    model.eval()
    return model
