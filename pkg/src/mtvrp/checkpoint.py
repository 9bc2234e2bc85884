"""Named-tensor checkpoint archive.

A checkpoint is a single ``.npz`` file: one float32 row-major array per
parameter name plus a ``__manifest__`` entry holding JSON with the model
configuration (dim, heads, layers, hidden size) and the tensor list.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .policy import ModelConfig, RoutingPolicy

MANIFEST_KEY = "__manifest__"


def save_checkpoint(policy: RoutingPolicy, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().cpu().to(torch.float32).contiguous().numpy() for k, v in policy.state_dict().items()}
    manifest = {
        "format": "mtvrp-named-tensors",
        "version": 1,
        "config": policy.config.to_dict(),
        "tensors": {k: {"shape": list(a.shape), "dtype": "f32"} for k, a in tensors.items()},
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **tensors, **{MANIFEST_KEY: np.array(json.dumps(manifest))})
    tmp.replace(path)
    return path


def read_manifest(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return json.loads(str(z[MANIFEST_KEY]))


def load_checkpoint(path, dtype=torch.float32) -> RoutingPolicy:
    with np.load(path, allow_pickle=False) as z:
        manifest = json.loads(str(z[MANIFEST_KEY]))
        policy = RoutingPolicy(ModelConfig(**manifest["config"]))
        state = {}
        for name, meta in manifest["tensors"].items():
            arr = z[name]
            if list(arr.shape) != meta["shape"]:
                raise ValueError(f"tensor {name} has shape {arr.shape}, manifest says {meta['shape']}")
            state[name] = torch.from_numpy(arr.copy())
    policy.load_state_dict(state)
    return policy.to(dtype)
