"""Binary weight archives and raw tensor blobs.

Both formats are raw little-endian float32 data with a JSON sidecar at
``<path>.json``. A weight manifest lists tensors in file order::

    {"format": "f32le", "total_bytes": N,
     "tensors": [{"name": ..., "shape": [...], "offset": ..., "nbytes": ...}, ...]}

A tensor blob sidecar is ``{"shape": [...], "dtype": "f32", "layout": "BCHW"}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, ModelParams, build_model

F32LE = np.dtype("<f4")


def sidecar(path: str | Path) -> Path:
    return Path(f"{path}.json")


def save_weights(params: ModelParams, path: str | Path) -> dict:
    entries = []
    offset = 0
    with open(path, "wb") as fh:
        for name, t in params.named_tensors(buffers=True):
            raw = np.ascontiguousarray(t, dtype=F32LE).tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    manifest = {"format": "f32le", "total_bytes": offset, "tensors": entries}
    sidecar(path).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def load_weights(cfg: ModelConfig, path: str | Path) -> ModelParams:
    """Load an archive into a model of ``cfg``, validating every name, shape and offset."""
    try:
        manifest = json.loads(sidecar(path).read_text())
        data = Path(path).read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read weight archive {path}: {exc}") from None
    if manifest.get("format") != "f32le" or not isinstance(manifest.get("tensors"), list):
        raise FormatError("manifest must declare format 'f32le' and a tensor list")
    if manifest.get("total_bytes") != len(data):
        raise FormatError(f"archive holds {len(data)} bytes, manifest declares {manifest.get('total_bytes')}")

    params = build_model(cfg, seed=0)
    expected = params.named_tensors(buffers=True)
    entries = manifest["tensors"]
    if len(entries) != len(expected):
        raise FormatError(f"manifest lists {len(entries)} tensors, config needs {len(expected)}")
    offset = 0
    for entry, (name, target) in zip(entries, expected):
        try:
            e_name, shape, e_off, nbytes = entry["name"], tuple(entry["shape"]), entry["offset"], entry["nbytes"]
        except (KeyError, TypeError):
            raise FormatError(f"malformed manifest entry {entry!r}") from None
        if e_name != name:
            raise FormatError(f"expected tensor {name!r}, manifest has {e_name!r}")
        if shape != target.shape:
            raise FormatError(f"{name}: manifest shape {list(shape)} but config needs {list(target.shape)}")
        if e_off != offset or nbytes != 4 * target.size:
            raise FormatError(f"{name}: bad offset/length {e_off}/{nbytes}")
        target[...] = np.frombuffer(data, F32LE, count=target.size, offset=offset).reshape(shape)
        offset += nbytes
    return params


def write_blob(path: str | Path, arr: np.ndarray, layout: str = "BCHW"):
    Path(path).write_bytes(np.ascontiguousarray(arr, dtype=F32LE).tobytes())
    sidecar(path).write_text(json.dumps({"shape": list(arr.shape), "dtype": "f32", "layout": layout}) + "\n")


def read_blob(path: str | Path) -> np.ndarray:
    try:
        meta = json.loads(sidecar(path).read_text())
        raw = Path(path).read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read tensor blob {path}: {exc}") from None
    if meta.get("dtype") != "f32":
        raise FormatError(f"unsupported blob dtype {meta.get('dtype')!r}")
    shape = tuple(int(s) for s in meta.get("shape", ()))
    if len(raw) != 4 * int(np.prod(shape)):
        raise FormatError(f"blob holds {len(raw)} bytes, shape {list(shape)} needs {4 * int(np.prod(shape))}")
    return np.frombuffer(raw, F32LE).reshape(shape).astype(np.float32)
