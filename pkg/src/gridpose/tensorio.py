"""Raw tensor dump format: .bin payload + .json sidecar + manifest.

Payloads are little-endian 32- or 64-bit floats in row-major order. Each
tensor <name>.bin pairs with <name>.json holding
{"name": ..., "dtype": "f32"|"f64", "shape": [...]}; a weight set adds a
manifest.json listing every tensor name. Format problems (truncated
payloads, unknown dtype tags, sidecar/payload disagreement) raise OSError
so the CLI can map them to its I/O exit code.
"""

from __future__ import annotations

import json
import os

import numpy as np

DTYPE_TO_TAG = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
TAG_TO_DTYPE = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

MANIFEST_NAME = "manifest.json"


def save_tensor(directory, name, array):
    """Write one tensor as <name>.bin plus <name>.json under directory."""
    if "/" in name or "\\" in name or name in ("", ".", ".."):
        raise ValueError(f"tensor name {name!r} is not a plain file stem")
    arr = np.asarray(array)
    if arr.dtype not in DTYPE_TO_TAG:
        raise ValueError(f"only float32/float64 tensors are dumpable, got {arr.dtype}")
    tag = DTYPE_TO_TAG[arr.dtype]
    payload = np.ascontiguousarray(arr).astype(TAG_TO_DTYPE[tag], copy=False)
    with open(os.path.join(directory, f"{name}.bin"), "wb") as fh:
        fh.write(payload.tobytes(order="C"))
    sidecar = {"name": name, "dtype": tag, "shape": [int(s) for s in arr.shape]}
    with open(os.path.join(directory, f"{name}.json"), "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def load_tensor(directory, name):
    """Read one tensor back; returns a native-order ndarray."""
    sidecar_path = os.path.join(directory, f"{name}.json")
    try:
        with open(sidecar_path) as fh:
            sidecar = json.load(fh)
    except json.JSONDecodeError as exc:
        raise OSError(f"corrupt tensor sidecar {sidecar_path}: {exc}") from exc
    for key in ("name", "dtype", "shape"):
        if key not in sidecar:
            raise OSError(f"tensor sidecar {sidecar_path} lacks '{key}'")
    if sidecar["dtype"] not in TAG_TO_DTYPE:
        raise OSError(f"unknown dtype tag {sidecar['dtype']!r} in {sidecar_path}")
    dtype = TAG_TO_DTYPE[sidecar["dtype"]]
    shape = tuple(int(s) for s in sidecar["shape"])
    with open(os.path.join(directory, f"{name}.bin"), "rb") as fh:
        raw = fh.read()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise OSError(
            f"tensor {name}: payload is {len(raw)} bytes, sidecar shape {shape} needs {expected}"
        )
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def save_tensor_set(directory, tensors):
    """Dump a {name: array-or-Tensor} mapping plus a manifest listing it."""
    os.makedirs(directory, exist_ok=True)
    names = sorted(tensors)
    for name in names:
        value = tensors[name]
        save_tensor(directory, name, getattr(value, "data", value))
    with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
        json.dump({"tensors": names}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tensor_set(directory):
    """Inverse of `save_tensor_set`: manifest-driven {name: ndarray}."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise OSError(f"corrupt manifest {manifest_path}: {exc}") from exc
    if "tensors" not in manifest:
        raise OSError(f"manifest {manifest_path} lacks a 'tensors' list")
    return {name: load_tensor(directory, name) for name in manifest["tensors"]}
