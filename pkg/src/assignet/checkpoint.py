"""Model checkpoints.

A checkpoint is a single ``.npz`` archive containing:

* ``__meta__`` -- a JSON string with ``format_version`` and the full
  architecture configuration, so the model can be rebuilt without any
  side information.
* one float32 array per learnable parameter, keyed by its dot-separated
  path in the module tree (e.g. ``branch_d.encoder.layers.0.self_attn.
  wq.weight``), stored row-major.

The format is stable: readers reject unknown ``format_version`` values and
parameter name/shape mismatches rather than guessing.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .model import TadnConfig, TadnModel

__all__ = ["FORMAT_VERSION", "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, model: TadnModel) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
    }
    arrays = {
        name: tensor.detach().cpu().numpy().astype(np.float32)
        for name, tensor in model.state_dict().items()
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> TadnModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive:
            raise ValueError(f"{path}: not a model checkpoint (missing metadata)")
        meta = json.loads(str(archive["__meta__"]))
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported checkpoint format version {version!r}"
            )
        config = TadnConfig.from_dict(meta["config"])
        model = TadnModel(config)
        state = {}
        for name, tensor in model.state_dict().items():
            if name not in archive:
                raise ValueError(f"{path}: missing parameter {name!r}")
            arr = archive[name]
            if tuple(arr.shape) != tuple(tensor.shape):
                raise ValueError(
                    f"{path}: parameter {name!r} has shape {arr.shape}, "
                    f"expected {tuple(tensor.shape)}"
                )
            state[name] = torch.from_numpy(arr.copy()).to(tensor.dtype)
    model.load_state_dict(state)
    model.eval()
    return model
