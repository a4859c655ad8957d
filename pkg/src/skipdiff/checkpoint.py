"""Versioned binary checkpoint container.

Layout: 4-byte magic, u32 format version, u64 JSON header length, UTF-8
JSON header, then named float64 little-endian weight blobs in header
order. Weights round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"SKPD"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str                    # "exploiter" | "scheduler"
    config: dict
    params: dict[str, np.ndarray]
    vocab_tokens: list[str]
    dataset_tag: str


def save_checkpoint(path, kind: str, config: dict,
                    params: dict[str, np.ndarray],
                    vocab_tokens: list[str], dataset_tag: str = "") -> None:
    blobs = []
    payload = bytearray()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"weight {name!r} contains non-finite values")
        blobs.append({"name": name, "shape": list(arr.shape),
                      "offset": len(payload), "nbytes": arr.nbytes})
        payload.extend(arr.tobytes(order="C"))
    header = json.dumps({
        "kind": kind,
        "config": config,
        "vocab": list(vocab_tokens),
        "dataset": dataset_tag,
        "blobs": blobs,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    base = 16 + header_len
    params = {}
    for blob in header["blobs"]:
        start = base + blob["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=blob["nbytes"] // 8,
                            offset=start).reshape(blob["shape"])
        params[blob["name"]] = arr.copy()
    return Checkpoint(kind=header["kind"], config=header["config"],
                      params=params, vocab_tokens=header["vocab"],
                      dataset_tag=header["dataset"])
