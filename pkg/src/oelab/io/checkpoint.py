"""Checkpoint container.

Layout: magic "OELB" | u32 format version | u64 header length | header JSON
(UTF-8) | concatenated raw little-endian array blocks. The header records
step, an arbitrary config snapshot, and a block index (name, shape, dtype,
offset, nbytes) with offsets relative to the data section. Arrays are
written in sorted-name order, so saving the same state twice is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OELB"
FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    step: int,
    config: dict | None = None,
) -> None:
    blocks = []
    payload = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        blocks.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": le.dtype.str,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "config": config,
        "blocks": blocks,
    }
    header_raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header_raw)))
        f.write(header_raw)
        for raw in payload:
            f.write(raw)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], int, dict | None]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        data = f.read()
    arrays = {}
    for blk in header["blocks"]:
        raw = data[blk["offset"] : blk["offset"] + blk["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(blk["dtype"])).reshape(blk["shape"])
        arrays[blk["name"]] = arr.copy()  # writable, owns its memory
    return arrays, header["step"], header.get("config")
