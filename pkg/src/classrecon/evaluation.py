"""Transfer-confidence scoring under the held-out classifier, reports, and image grids."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .checkpointing import ModelCheckpoint
from .classifiers import predict_probs
from .data import person_id, to_uint8
from .results import AttackResult

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("gan", "vae", "diffusion")
CSV_HEADER = ["target_id", "method", "attacked_confidence", "transfer_confidence", "artifact_path", "seed"]


def transfer_confidence(eval_ckpt: ModelCheckpoint, image: np.ndarray, target: int) -> float:
    """Held-out classifier's softmax probability that `image` is the target class."""
    return float(predict_probs(eval_ckpt, image)[target])


def prediction_entropy(probs: np.ndarray) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-12, 1.0)
    return float(-(p * np.log(p)).sum())


@dataclass
class EvaluationReport:
    """Per-(target, method) transfer confidences plus provenance metadata."""

    cells: dict[tuple[int, str], AttackResult]
    eval_checksum: str
    metadata: dict = field(default_factory=dict)

    @property
    def targets(self) -> list[int]:
        return sorted({t for t, _ in self.cells})

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for (target, method) in sorted(self.cells):
            r = self.cells[(target, method)]
            writer.writerow(
                [
                    target,
                    method,
                    repr(float(r.attacked_confidence)),
                    repr(float(r.transfer_confidence)) if r.transfer_confidence is not None else "",
                    r.artifact_path or "",
                    r.seeds.get("attack", r.seeds.get("gan", r.seeds.get("latent", ""))),
                ]
            )
        return buf.getvalue()

    def matrix_text(self) -> str:
        """Targets-by-methods table of transfer confidences; missing cells marked."""
        lines = ["transfer confidence (held-out classifier)"]
        header = "target".ljust(12) + "".join(m.rjust(12) for m in REPORT_COLUMNS)
        lines.append(header)
        for target in self.targets:
            row = f"person {person_id(target)}".ljust(12)
            for method in REPORT_COLUMNS:
                r = self.cells.get((target, method))
                if r is None or r.transfer_confidence is None:
                    row += "missing".rjust(12)
                else:
                    row += f"{r.transfer_confidence:.4f}".rjust(12)
            lines.append(row)
        return "\n".join(lines) + "\n"

    def best_per_method(self) -> dict[str, tuple[int, float]]:
        best: dict[str, tuple[int, float]] = {}
        for (target, method), r in self.cells.items():
            if r.transfer_confidence is None:
                continue
            if method not in best or r.transfer_confidence > best[method][1]:
                best[method] = (target, r.transfer_confidence)
        return best


def build_report(results: list[AttackResult], eval_ckpt: ModelCheckpoint) -> EvaluationReport:
    """Score every result under the held-out classifier and lay out the matrix.

    The evaluation checkpoint must differ (by checksum) from every attacked
    checkpoint; duplicate (target, method) cells resolve to the latest.
    """
    eval_checksum = eval_ckpt.checksum()
    cells: dict[tuple[int, str], AttackResult] = {}
    for r in results:
        if r.attacked_checksum == eval_checksum:
            raise ValueError(
                f"evaluation classifier equals the attacked classifier "
                f"(checksum {eval_checksum[:12]}...); transfer scores would be meaningless"
            )
        key = (r.target, r.method)
        if key in cells:
            logger.warning("duplicate report cell %s: keeping the latest result", key)
        r.transfer_confidence = transfer_confidence(eval_ckpt, r.image, r.target)
        cells[key] = r
    return EvaluationReport(cells=cells, eval_checksum=eval_checksum)


def export_grid(images: list[np.ndarray], labels: list[str], path, tile_gap: int = 2) -> Path:
    """Row-major grid of equal-sized canonical images with a label strip per tile."""
    if len(images) == 0:
        raise ValueError("export_grid needs at least one image")
    if len(labels) != len(images):
        raise ValueError(f"{len(labels)} labels for {len(images)} images")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ValueError("all grid images must share one shape")

    h, w = shape
    strip = 12
    cols = min(len(images), 4)
    rows = (len(images) + cols - 1) // cols
    canvas = Image.new("L", (cols * (w + tile_gap) - tile_gap, rows * (h + strip + tile_gap) - tile_gap), 255)
    draw = ImageDraw.Draw(canvas)
    for i, (im, label) in enumerate(zip(images, labels)):
        r, c = divmod(i, cols)
        x0 = c * (w + tile_gap)
        y0 = r * (h + strip + tile_gap)
        canvas.paste(Image.fromarray(to_uint8(im), mode="L"), (x0, y0))
        draw.text((x0 + 1, y0 + h), label[:16], fill=0)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    canvas.save(path)
    return path
