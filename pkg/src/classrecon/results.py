"""Shared attack-result record and its on-disk artifact layout."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .data import to_uint8

METHODS = ("diffusion", "gan", "vae", "pixel")


@dataclass
class AttackResult:
    """Everything one attack run produced: image, trace, confidences, seeds."""

    method: str
    target: int
    image: np.ndarray
    loss_trace: list[float]
    iterations_run: int
    attacked_confidence: float
    attacked_checksum: str
    transfer_confidence: float | None = None
    seeds: dict = field(default_factory=dict)
    diverged: bool = False
    info: dict = field(default_factory=dict)
    artifact_path: str | None = None

    def image_checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.image, dtype="<f4").tobytes()).hexdigest()


def save_result(result: AttackResult, out_dir) -> Path:
    """Write the result image (PNG), trace CSV, and a key-value manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    Image.fromarray(to_uint8(result.image), mode="L").save(out / "result.png")
    np.save(out / "result.npy", result.image.astype(np.float32))

    with open(out / "trace.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss", "confidence"])
        confs = result.info.get("confidence_trace", [])
        for i, loss in enumerate(result.loss_trace):
            conf = confs[i] if i < len(confs) else ""
            writer.writerow([i, repr(float(loss)), repr(float(conf)) if conf != "" else ""])

    lines = [
        f"method = {result.method}",
        f"target = {result.target}",
        f"iterations_run = {result.iterations_run}",
        f"attacked_confidence = {result.attacked_confidence!r}",
        f"attacked_checksum = {result.attacked_checksum}",
        f"diverged = {result.diverged}",
        f"image_checksum = {result.image_checksum()}",
    ]
    lines += [f"seed.{k} = {v}" for k, v in sorted(result.seeds.items())]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")

    record = {
        "method": result.method,
        "target": result.target,
        "loss_trace": [float(x) for x in result.loss_trace],
        "iterations_run": result.iterations_run,
        "attacked_confidence": float(result.attacked_confidence),
        "attacked_checksum": result.attacked_checksum,
        "transfer_confidence": result.transfer_confidence,
        "seeds": result.seeds,
        "diverged": result.diverged,
        "info": {k: v for k, v in result.info.items() if _json_safe(v)},
    }
    (out / "result.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    result.artifact_path = str(out)
    return out


def load_result(artifact_dir) -> AttackResult:
    d = Path(artifact_dir)
    record = json.loads((d / "result.json").read_text())
    result = AttackResult(
        method=record["method"],
        target=record["target"],
        image=np.load(d / "result.npy"),
        loss_trace=record["loss_trace"],
        iterations_run=record["iterations_run"],
        attacked_confidence=record["attacked_confidence"],
        attacked_checksum=record["attacked_checksum"],
        transfer_confidence=record["transfer_confidence"],
        seeds=record["seeds"],
        diverged=record["diverged"],
        info=record["info"],
        artifact_path=str(d),
    )
    return result


def _json_safe(value) -> bool:
    try:
        json.dumps(value)
        return True
    except TypeError:
        return False
