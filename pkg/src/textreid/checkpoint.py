"""Flat binary parameter files: length-prefixed JSON header + float64 payload.

Layout: 8-byte little-endian header length, UTF-8 JSON header listing
(name, shape, offset) per parameter, then the concatenated little-endian
float64 payloads. Offsets are relative to the payload start. Round trips
are bit exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tensor

FORMAT_NAME = "textreid-params-v1"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    entries = []
    payloads = []
    offset = 0
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.asarray(arr, dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"format": FORMAT_NAME, "params": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payloads:
            fh.write(chunk)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated header length")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if len(blob) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
    payload = blob[8 + header_len:]
    out: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(payload):
            raise CheckpointError(f"{path}: payload too short for {entry['name']}")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape)
        out[entry["name"]] = arr.astype(np.float64).copy()
    return out


def restore_into(params: Mapping[str, Tensor], stored: Mapping[str, np.ndarray]) -> None:
    """Copy stored arrays into existing parameter tensors, shape checked."""
    missing = set(params) - set(stored)
    extra = set(stored) - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter names differ: missing={sorted(missing)}, "
                              f"extra={sorted(extra)}")
    for name, tensor in params.items():
        arr = stored[name]
        if arr.shape != tensor.data.shape:
            raise CheckpointError(f"{name}: stored shape {arr.shape} != {tensor.data.shape}")
        tensor.data[...] = arr
