"""Versioned on-disk container for named float32 parameter arrays."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
_PARAM_PREFIX = "param/"


@dataclass
class ModelCheckpoint:
    """Named, shaped float32 parameter arrays plus a metadata block.

    Save/load round-trips are bit-exact; `metadata["arch"]` tells the owning
    module how to rebuild the network.
    """

    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_module(cls, module: torch.nn.Module, metadata: dict | None = None) -> "ModelCheckpoint":
        params = {
            name: tensor.detach().cpu().numpy().astype(np.float32, copy=True)
            for name, tensor in module.state_dict().items()
        }
        return cls(params=params, metadata=dict(metadata or {}))

    def load_into(self, module: torch.nn.Module) -> torch.nn.Module:
        state = {name: torch.from_numpy(np.ascontiguousarray(arr)) for name, arr in self.params.items()}
        module.load_state_dict(state)
        return module

    def checksum(self) -> str:
        """sha256 over parameter names, shapes, and little-endian bytes."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = dict(self.metadata)
        meta["format_version"] = FORMAT_VERSION
        payload = {_PARAM_PREFIX + k: np.asarray(v, dtype=np.float32) for k, v in self.params.items()}
        payload["metadata_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as f:
            np.savez(f, **payload)
        return path


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["metadata_json"]).decode())
        version = meta.pop("format_version", None)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format version {version}")
        params = {
            key[len(_PARAM_PREFIX):]: blob[key].astype(np.float32)
            for key in blob.files
            if key.startswith(_PARAM_PREFIX)
        }
    return ModelCheckpoint(params=params, metadata=meta)


def module_checksum(module: torch.nn.Module) -> str:
    return ModelCheckpoint.from_module(module).checksum()
