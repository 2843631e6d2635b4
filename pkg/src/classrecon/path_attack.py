"""Noise-path attack: optimize the initial noise of a fixed denoising trajectory
so the sampled image maximizes the attacked classifier's target confidence.

All network weights and every per-step injection stay frozen; only x_T moves
(optionally the injections too, off by default). Gradients flow through the
whole T-step sampler, either as one live graph or segment-checkpointed to
bound memory.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.utils.checkpoint import checkpoint as torch_checkpoint

from .checkpointing import ModelCheckpoint
from .classifiers import _coerce_model
from .diffusion import NoisePath, VarianceSchedule, denoise_step
from .results import AttackResult
from .unet import predictor_from_checkpoint

DEFAULT_SEGMENT = 25


@dataclass(frozen=True)
class PathAttackConfig:
    target: int
    learning_rate: float = 1.0
    max_iterations: int = 200
    stop_loss: float = 0.05
    grad_mode: str = f"checkpointed:{DEFAULT_SEGMENT}"
    backtracking: bool = True
    stop_on_plateau: bool = False
    plateau_rel_tol: float = 1e-3
    plateau_window: int = 5
    optimize_injections: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        parse_grad_mode(self.grad_mode)


def parse_grad_mode(mode: str) -> tuple[str, int | None]:
    """'full_graph' or 'checkpointed:<segment_length>'."""
    if mode == "full_graph":
        return "full_graph", None
    if mode.startswith("checkpointed"):
        _, _, seg = mode.partition(":")
        segment = int(seg) if seg else DEFAULT_SEGMENT
        if segment < 1:
            raise ValueError(f"segment length must be >= 1, got {segment}")
        return "checkpointed", segment
    raise ValueError(f"unknown gradient mode {mode!r}")


def _coerce_predictor(predictor) -> nn.Module:
    if isinstance(predictor, ModelCheckpoint):
        return predictor_from_checkpoint(predictor)
    return predictor


def _run_segment(x, zs, predictor, sched, t_hi, t_lo):
    for t in range(t_hi, t_lo - 1, -1):
        x = denoise_step(x, t, zs[t_hi - t][None, None], predictor, sched)
    return x


def sample_differentiable(
    x_init: torch.Tensor,
    injections: torch.Tensor,
    predictor: nn.Module,
    sched: VarianceSchedule,
    mode: str = "full_graph",
) -> torch.Tensor:
    """Run the full denoise fold with gradients enabled.

    In checkpointed mode only segment boundaries stay live; the interior of
    each segment is re-run during the backward pass, so peak graph size is
    O(segment_length) steps instead of O(T).
    """
    kind, segment = parse_grad_mode(mode)
    T = sched.steps
    x = x_init
    if kind == "full_graph":
        return _run_segment(x, injections.flip(0), predictor, sched, T, 1)

    t_hi = T
    while t_hi >= 1:
        t_lo = max(t_hi - segment + 1, 1)
        zs = injections[t_lo - 1 : t_hi].flip(0)
        if x.requires_grad or zs.requires_grad:
            x = torch_checkpoint(
                lambda x_, zs_, hi=t_hi, lo=t_lo: _run_segment(x_, zs_, predictor, sched, hi, lo),
                x,
                zs,
                use_reentrant=False,
            )
        else:
            x = _run_segment(x, zs, predictor, sched, t_hi, t_lo)
        t_hi = t_lo - 1
    return x


def _path_loss(x_init, injections, classifier, predictor, sched, target, mode):
    image = sample_differentiable(x_init, injections, predictor, sched, mode)
    logits = classifier(image)
    loss = F.cross_entropy(logits, torch.tensor([target]))
    conf = float(torch.softmax(logits.detach(), dim=1)[0, target])
    return loss, conf, image


def gradient_of_path_loss(
    classifier,
    predictor,
    sched: VarianceSchedule,
    path: NoisePath,
    target: int,
    mode: str = "full_graph",
) -> np.ndarray:
    """d CE(C(sample(x_T)), target) / d x_T with injections and weights frozen."""
    clf = _coerce_model(classifier)
    pred = _coerce_predictor(predictor)
    dtype = next(pred.parameters()).dtype
    x = torch.as_tensor(path.x_init, dtype=dtype)[None, None].requires_grad_(True)
    zs = torch.as_tensor(path.injections, dtype=dtype)
    loss, _, _ = _path_loss(x, zs, clf, pred, sched, target, mode)
    (grad,) = torch.autograd.grad(loss, x)
    return grad[0, 0].numpy()


def attack(
    classifier,
    predictor,
    sched: VarianceSchedule,
    path: NoisePath,
    cfg: PathAttackConfig,
) -> AttackResult:
    """Gradient descent on the path loss over x_T; injections never move.

    Stops at `stop_loss`, on plateau (when enabled), or after
    `max_iterations`. A non-finite loss or gradient aborts and returns the
    partial trace flagged as diverged.
    """
    clf = _coerce_model(classifier)
    clf.eval()
    pred = _coerce_predictor(predictor)
    pred.eval()
    attacked_checksum = (
        classifier.checksum()
        if isinstance(classifier, ModelCheckpoint)
        else ModelCheckpoint.from_module(clf).checksum()
    )
    dtype = next(pred.parameters()).dtype
    zs = torch.as_tensor(path.injections.copy(), dtype=dtype)
    x = torch.as_tensor(path.x_init.copy(), dtype=dtype)[None, None]

    trace: list[float] = []
    conf_trace: list[float] = []
    diverged = False
    iterations = 0
    final_image: np.ndarray | None = None

    for i in range(cfg.max_iterations + 1):
        x_leaf = x.detach().requires_grad_(True)
        loss, conf, image = _path_loss(x_leaf, zs, clf, pred, sched, cfg.target, cfg.grad_mode)
        if not torch.isfinite(loss):
            diverged = True
            break
        trace.append(float(loss))
        conf_trace.append(conf)
        final_image = image.detach()[0, 0].numpy()

        if float(loss) <= cfg.stop_loss or i == cfg.max_iterations:
            break
        if cfg.stop_on_plateau:
            plateau = iterations_to_plateau(trace, cfg.plateau_rel_tol, cfg.plateau_window)
            if plateau is not None:
                break

        (grad,) = torch.autograd.grad(loss, x_leaf)
        if not torch.isfinite(grad).all():
            diverged = True
            break

        step = cfg.learning_rate
        x_next = x.detach() - step * grad
        if cfg.backtracking:
            accepted = False
            for _ in range(10):
                with torch.no_grad():
                    trial_loss, _, _ = _path_loss(x_next, zs, clf, pred, sched, cfg.target, "full_graph")
                if torch.isfinite(trial_loss) and float(trial_loss) <= trace[-1]:
                    accepted = True
                    break
                step /= 2.0
                x_next = x.detach() - step * grad
            if not accepted:
                break  # no descent direction left at any step size
        x = x_next
        iterations = i + 1

    result = AttackResult(
        method="diffusion",
        target=cfg.target,
        image=final_image if final_image is not None else path.x_init.copy(),
        loss_trace=trace,
        iterations_run=iterations,
        attacked_confidence=conf_trace[-1] if conf_trace else 0.0,
        attacked_checksum=attacked_checksum,
        seeds={"path": path.seed, "attack": cfg.seed},
        diverged=diverged,
        info={
            "confidence_trace": conf_trace,
            "learning_rate": cfg.learning_rate,
            "grad_mode": cfg.grad_mode,
        },
    )
    return result


def iterations_to_plateau(trace: list[float], rel_tol: float = 1e-3, window: int = 5) -> int | None:
    """First index whose trailing window of losses varies by under rel_tol of scale."""
    for i in range(window, len(trace)):
        lo = min(trace[i - window : i + 1])
        hi = max(trace[i - window : i + 1])
        if hi - lo <= rel_tol * max(abs(trace[i]), 1e-12):
            return i
    return None


@dataclass
class LrStudyEntry:
    learning_rate: float
    converged: bool
    iterations_to_plateau: int
    final_loss: float
    image_checksum: str
    result: AttackResult = field(repr=False)


def lr_study(
    classifier,
    predictor,
    sched: VarianceSchedule,
    path: NoisePath,
    target: int,
    learning_rates: list[float],
    max_iterations: int = 48,
) -> list[LrStudyEntry]:
    """Rerun the attack over a learning-rate sweep on one shared path.

    Plain gradient descent (no backtracking) so the raw behavior of each
    step size is visible; divergent runs are recorded, not raised.
    """
    entries = []
    for lr in learning_rates:
        cfg = PathAttackConfig(
            target=target,
            learning_rate=lr,
            max_iterations=max_iterations,
            stop_loss=0.0,
            backtracking=False,
            stop_on_plateau=True,
        )
        res = attack(classifier, predictor, sched, path, cfg)
        res.info["learning_rate"] = lr
        plateau = iterations_to_plateau(res.loss_trace, cfg.plateau_rel_tol, cfg.plateau_window)
        entries.append(
            LrStudyEntry(
                learning_rate=lr,
                converged=plateau is not None and not res.diverged,
                iterations_to_plateau=plateau if plateau is not None else len(res.loss_trace),
                final_loss=res.loss_trace[-1] if res.loss_trace else float("nan"),
                image_checksum=hashlib.sha256(
                    np.ascontiguousarray(res.image, dtype="<f4").tobytes()
                ).hexdigest(),
                result=res,
            )
        )
    return entries


def lr_study_table(entries: list[LrStudyEntry]) -> str:
    lines = ["learning_rate,converged,iterations_to_plateau,final_loss,image_checksum"]
    for e in entries:
        lines.append(
            f"{e.learning_rate!r},{int(e.converged)},{e.iterations_to_plateau},"
            f"{e.final_loss!r},{e.image_checksum}"
        )
    return "\n".join(lines) + "\n"
