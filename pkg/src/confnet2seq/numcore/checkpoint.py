"""Checkpoint serialization.

A checkpoint is a pair of files sharing one path prefix: ``<prefix>.json``
holds the manifest (parameter and state names with shapes, the step counter
and an arbitrary config dict); ``<prefix>.bin`` is the matching flat
little-endian float64 blob, arrays concatenated in manifest order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CompatibilityError
from .tensor import Tensor

FORMAT_TAG = "confnet2seq-checkpoint-v1"


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    state: dict[str, np.ndarray]
    step: int
    config: dict


def save_checkpoint(prefix, params: dict[str, Tensor], step: int, config: dict,
                    state: dict[str, np.ndarray] | None = None) -> None:
    prefix = Path(prefix)
    state = state or {}
    manifest = {
        "format": FORMAT_TAG,
        "step": step,
        "config": config,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "state": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
    with open(f"{prefix}.bin", "wb") as fh:
        for tensor in params.values():
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
        for arr in state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(prefix) -> Checkpoint:
    prefix = Path(prefix)
    try:
        with open(f"{prefix}.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CompatibilityError(f"cannot read checkpoint manifest {prefix}.json: {exc}") from None
    if manifest.get("format") != FORMAT_TAG:
        raise CompatibilityError(
            f"unknown checkpoint format {manifest.get('format')!r}, expected {FORMAT_TAG!r}"
        )
    blob = np.fromfile(f"{prefix}.bin", dtype="<f8")
    entries = list(manifest["params"]) + list(manifest["state"])
    expected = sum(int(np.prod(e["shape"])) if e["shape"] else 1 for e in entries)
    if blob.size != expected:
        raise CompatibilityError(
            f"checkpoint blob holds {blob.size} values but the manifest declares {expected}"
        )
    offset = 0
    params: dict[str, Tensor] = {}
    state: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        t = Tensor(blob[offset:offset + count].reshape(shape), requires_grad=True, name=entry["name"])
        params[entry["name"]] = t
        offset += count
    for entry in manifest["state"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        state[entry["name"]] = np.array(blob[offset:offset + count].reshape(shape))
        offset += count
    return Checkpoint(params=params, state=state, step=int(manifest["step"]), config=manifest["config"])
