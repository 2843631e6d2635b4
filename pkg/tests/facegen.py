"""Deterministic synthetic face-portrait generator used as the test dataset.

Produces the canonical geometry (40 classes x 10 images, 64x64, storage range
[0, 1]) with per-class facial geometry and small per-image jitter, so
classifiers separate classes easily and generative models have smooth,
face-like structure to learn.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MASTER_SEED = 20260810


def _smooth_disk(yy, xx, cy, cx, ry, rx, sharpness=1.5):
    d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return 1.0 / (1.0 + np.exp((d - 1.0) * 4.0 * sharpness))


def _render_face(size: int, geo: dict, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    s = size / 64.0

    img = np.full((size, size), geo["background"], dtype=np.float64)

    head = _smooth_disk(yy, xx, geo["head_cy"], geo["head_cx"], geo["head_ry"], geo["head_rx"])
    img = img * (1 - head) + geo["skin"] * head

    hair = _smooth_disk(yy, xx, geo["head_cy"] - geo["head_ry"] * 0.75, geo["head_cx"],
                        geo["hair_ry"], geo["head_rx"] * 1.05)
    img = img * (1 - hair * geo["hair_opacity"]) + geo["hair_tone"] * hair * geo["hair_opacity"]

    for side in (-1, 1):
        ex = geo["head_cx"] + side * geo["eye_dx"]
        ey = geo["eye_y"]
        eye = _smooth_disk(yy, xx, ey, ex, geo["eye_ry"], geo["eye_rx"], sharpness=2.5)
        img = img * (1 - eye) + geo["eye_tone"] * eye
        brow = _smooth_disk(yy, xx, ey - geo["brow_gap"], ex, 1.1 * s, geo["eye_rx"] * 1.6, sharpness=2.5)
        img = img * (1 - 0.7 * brow) + geo["hair_tone"] * 0.7 * brow

    nose = _smooth_disk(yy, xx, geo["nose_y"], geo["head_cx"], geo["nose_len"], 1.6 * s, sharpness=2.0)
    img = img * (1 - 0.35 * nose) + geo["nose_tone"] * 0.35 * nose

    mouth_curve = geo["mouth_curve"] * ((xx - geo["head_cx"]) / geo["mouth_rx"]) ** 2
    mouth = _smooth_disk(yy + mouth_curve, xx, geo["mouth_y"], geo["head_cx"],
                         geo["mouth_ry"], geo["mouth_rx"], sharpness=2.5)
    img = img * (1 - mouth) + geo["mouth_tone"] * mouth

    # low-frequency lighting field plus faint sensor noise
    field = rng.standard_normal((8, 8))
    field = np.kron(field, np.ones((size // 8, size // 8)))
    img = img + 0.015 * field + 0.01 * rng.standard_normal((size, size))
    return np.clip(img, 0.02, 0.98)


def _class_geometry(size: int, rng: np.random.Generator) -> dict:
    s = size / 64.0
    return {
        "background": rng.uniform(0.05, 0.25),
        "skin": rng.uniform(0.55, 0.8),
        "head_cy": (34 + rng.uniform(-2, 2)) * s,
        "head_cx": (32 + rng.uniform(-1.5, 1.5)) * s,
        "head_ry": (25 + rng.uniform(-3, 3)) * s,
        "head_rx": (19 + rng.uniform(-2.5, 2.5)) * s,
        "hair_ry": (10 + rng.uniform(-3, 4)) * s,
        "hair_tone": rng.uniform(0.03, 0.35),
        "hair_opacity": rng.uniform(0.5, 1.0),
        "eye_dx": (8.5 + rng.uniform(-1.5, 1.5)) * s,
        "eye_y": (28 + rng.uniform(-2, 2)) * s,
        "eye_ry": (1.6 + rng.uniform(-0.4, 0.7)) * s,
        "eye_rx": (2.6 + rng.uniform(-0.6, 0.9)) * s,
        "eye_tone": rng.uniform(0.02, 0.25),
        "brow_gap": (4.5 + rng.uniform(-1, 1.5)) * s,
        "nose_y": (36 + rng.uniform(-1.5, 1.5)) * s,
        "nose_len": (5.5 + rng.uniform(-1.5, 2)) * s,
        "nose_tone": rng.uniform(0.3, 0.5),
        "mouth_y": (46 + rng.uniform(-2, 2)) * s,
        "mouth_ry": (1.8 + rng.uniform(-0.5, 1.2)) * s,
        "mouth_rx": (6.5 + rng.uniform(-1.5, 2)) * s,
        "mouth_tone": rng.uniform(0.1, 0.4),
        "mouth_curve": rng.uniform(-2.5, 2.5) * s,
    }


def _jitter(geo: dict, rng: np.random.Generator, size: int) -> dict:
    s = size / 64.0
    out = dict(geo)
    dy, dx = rng.uniform(-1.5, 1.5, size=2) * s
    scale = 1.0 + rng.uniform(-0.04, 0.04)
    for key in geo:
        if key.endswith(("_y", "_cy")):
            out[key] = geo[key] * scale + dy
        elif key.endswith(("_x", "_cx", "_dx")):
            out[key] = geo[key] * scale + dx if key.endswith(("_cx",)) else geo[key] * scale
        elif key.endswith(("_ry", "_rx", "_len")):
            out[key] = geo[key] * scale
    out["skin"] = np.clip(geo["skin"] + rng.uniform(-0.04, 0.04), 0.05, 0.95)
    out["background"] = np.clip(geo["background"] + rng.uniform(-0.03, 0.03), 0.02, 0.5)
    return out


def synthesize_faces(
    num_classes: int = 40,
    per_class: int = 10,
    size: int = 64,
    seed: int = MASTER_SEED,
) -> tuple[np.ndarray, np.ndarray]:
    """(images [N,H,W] float32 in [0,1], labels [N] int64), ordered by class."""
    images, labels = [], []
    for c in range(num_classes):
        class_rng = np.random.default_rng([seed, c])
        geo = _class_geometry(size, class_rng)
        for _ in range(per_class):
            images.append(_render_face(size, _jitter(geo, class_rng, size), class_rng))
            labels.append(c)
    return np.stack(images).astype(np.float32), np.asarray(labels, dtype=np.int64)


def write_packed(images: np.ndarray, labels: np.ndarray, path) -> Path:
    """Spec storage layout (a): packed little-endian float32 + int32 sidecar."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(images, dtype="<f4").tobytes())
    Path(str(path) + ".labels").write_bytes(np.ascontiguousarray(labels, dtype="<i4").tobytes())
    return path


def write_pgm_tree(images: np.ndarray, labels: np.ndarray, root) -> Path:
    """Spec storage layout (b): class_<k>/img_<i>.pgm of 8-bit grayscale."""
    from PIL import Image

    root = Path(root)
    counters: dict[int, int] = {}
    for img, label in zip(images, labels):
        i = counters.get(int(label), 0)
        counters[int(label)] = i + 1
        d = root / f"class_{int(label) + 1}"
        d.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(d / f"img_{i}.pgm")
    return root
