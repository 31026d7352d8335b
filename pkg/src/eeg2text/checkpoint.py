"""Named-parameter checkpoint files.

A checkpoint is a single JSON document carrying a format-version tag, the
seed and config the run was built from, and named parameter entries whose
payloads are base64-wrapped little-endian 32-bit floats.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Parameter

FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint file is unreadable or malformed."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written with an unsupported format version."""


def encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": list(data.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def decode_array(entry: Mapping, context: str = "") -> np.ndarray:
    shape = tuple(int(s) for s in entry["shape"])
    raw = base64.b64decode(entry["data"])
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise CheckpointError(
            f"payload length {len(raw)} does not match shape {shape}"
            + (f" in {context}" if context else "")
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    seed: int

    def checksum(self) -> str:
        return params_checksum(self.params)


def params_checksum(params: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, Parameter | np.ndarray],
    config: dict,
    seed: int,
) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "config": config,
        "params": {
            name: encode_array(p.data if isinstance(p, Parameter) else p)
            for name, p in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has format_version {version!r}, expected {FORMAT_VERSION}"
        )
    try:
        params = {
            name: decode_array(entry, context=name)
            for name, entry in doc["params"].items()
        }
        return Checkpoint(params=params, config=doc["config"], seed=int(doc["seed"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
