"""Writers for the pipeline's binary containers (see the pipeline's docs/FORMATS.md).

Byte layout is fixed by the consumer: 4-byte magic, u16 version, then repeated
(H, W, C) u32 headers with float32 (bundles) or one-byte (masks) payloads, all
little-endian. Files are written atomically.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

BUNDLE_MAGIC = b"FBND"
MASK_MAGIC = b"FMSK"
FORMAT_VERSION = 1


def _write_atomic(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def write_bundle(path, layers) -> None:
    out = io.BytesIO()
    out.write(BUNDLE_MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    for layer in layers:
        arr = np.ascontiguousarray(np.asarray(layer, dtype=np.float32))
        if arr.ndim != 3:
            raise ValueError("bundle layers must be (H, W, C)")
        out.write(struct.pack("<III", *arr.shape))
        out.write(arr.astype("<f4").tobytes())
    _write_atomic(path, out.getvalue())


def write_mask(path, bitmap) -> None:
    arr = np.asarray(bitmap).astype(bool)
    if arr.ndim != 2:
        raise ValueError("mask must be 2-D")
    out = io.BytesIO()
    out.write(MASK_MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    out.write(struct.pack("<III", arr.shape[0], arr.shape[1], 1))
    out.write(arr.astype(np.uint8).tobytes())
    _write_atomic(path, out.getvalue())
