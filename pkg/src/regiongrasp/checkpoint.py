"""Shared named-array container ("RGKC1") for checkpoints and model files.

Layout: 5-byte magic, u32 format version, u64 header length, canonical JSON
header (entry names/shapes/offsets, config snapshot, RNG state digest), then
the concatenated little-endian float32 payload. Working precision elsewhere
is float64; storage quantizes to float32, and a load -> save round trip is
byte-identical because float32 -> float64 -> float32 is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"RGKC1"
VERSION = 1


class CheckpointError(Exception):
    """Corrupt or malformed container file."""


@dataclass
class Checkpoint:
    arrays: dict            # name -> float64 ndarray
    config: dict = field(default_factory=dict)
    rng_digest: str = ""
    version: int = VERSION


def save_checkpoint(path, arrays: dict, config: dict | None = None,
                    rng_digest: str = "") -> None:
    """Write named float arrays plus a config snapshot to ``path``."""
    names = sorted(arrays)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate entry names")
    entries = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64),
                                   dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": len(payload)})
        payload += arr.tobytes()
    header = json.dumps(
        {"entries": entries, "config": config or {}, "rng_digest": rng_digest},
        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:5]!r}")
    version = int.from_bytes(blob[5:9], "little")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    hlen = int.from_bytes(blob[9:17], "little")
    try:
        header = json.loads(blob[17:17 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = blob[17 + hlen:]
    arrays = {}
    for ent in header["entries"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        off = ent["offset"]
        raw = payload[off:off + 4 * count]
        if len(raw) != 4 * count:
            raise CheckpointError(f"{path}: truncated payload for {ent['name']}")
        arrays[ent["name"]] = np.frombuffer(raw, dtype="<f4").astype(
            np.float64).reshape(shape)
    return Checkpoint(arrays=arrays, config=header.get("config", {}),
                      rng_digest=header.get("rng_digest", ""), version=version)
