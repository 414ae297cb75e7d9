"""Binary containers shared with external exporters. See docs/FORMATS.md.

All multi-byte fields are little-endian. Every file starts with a 4-byte magic
and a u16 format version, then repeated records of a (H, W, C) u32 header plus
payload. Feature bundles ("FBND") and depth maps ("FDPT") carry float32
payloads, masks ("FMSK") one byte per pixel (0/1), and checkpoints ("CMKA")
named float32 tensors with explicit shape headers, sorted by name so identical
parameters serialize byte-identically.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .cmka import ModelSpec, TrainedParams, arrays_to_params, params_to_arrays
from .errors import BadMagicError, BadVersionError, DataIOError, InvalidArgumentError, TruncatedFileError

BUNDLE_MAGIC = b"FBND"
MASK_MAGIC = b"FMSK"
DEPTH_MAGIC = b"FDPT"
CHECKPOINT_MAGIC = b"CMKA"
FORMAT_VERSION = 1

_ACTIVATION_CODES = {"identity": 0.0, "tanh": 1.0}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}


def _read_exact(buf: io.BufferedReader, n: int, what: str, path) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"{path}: truncated while reading {what}")
    return data


def _open_checked(path, magic: bytes):
    try:
        buf = open(path, "rb")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    head = buf.read(len(magic))
    if len(head) < len(magic) or head != magic:
        buf.close()
        raise BadMagicError(f"{path}: expected magic {magic!r}, found {head!r}")
    version_bytes = buf.read(2)
    if len(version_bytes) < 2:
        buf.close()
        raise TruncatedFileError(f"{path}: truncated version field")
    (version,) = struct.unpack("<H", version_bytes)
    if version != FORMAT_VERSION:
        buf.close()
        raise BadVersionError(f"{path}: unsupported format version {version}")
    return buf


def _write_atomic(path, payload: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(payload)
        tmp.replace(path)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def write_bundle(path, layers) -> None:
    """Write feature layers as an FBND container (float32, row-major)."""
    if not layers:
        raise InvalidArgumentError("bundle needs at least one layer")
    out = io.BytesIO()
    out.write(BUNDLE_MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    for layer in layers:
        arr = np.ascontiguousarray(np.asarray(layer, dtype=np.float32))
        if arr.ndim != 3:
            raise InvalidArgumentError("bundle layers must be (H, W, C)")
        out.write(struct.pack("<III", *arr.shape))
        out.write(arr.astype("<f4").tobytes())
    _write_atomic(path, out.getvalue())


def read_bundle(path) -> list[np.ndarray]:
    """Read an FBND container back into a list of float32 (H, W, C) arrays."""
    layers = []
    with _open_checked(path, BUNDLE_MAGIC) as buf:
        while True:
            header = buf.read(12)
            if len(header) == 0:
                break
            if len(header) < 12:
                raise TruncatedFileError(f"{path}: truncated layer header")
            h, w, c = struct.unpack("<III", header)
            if h == 0 or w == 0 or c == 0:
                raise TruncatedFileError(f"{path}: zero-sized layer header")
            payload = _read_exact(buf, h * w * c * 4, "layer payload", path)
            layers.append(np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy())
    if not layers:
        raise TruncatedFileError(f"{path}: bundle holds no layers")
    return layers


def write_mask(path, bitmap) -> None:
    """Write a boolean mask as an FMSK container (one byte per pixel)."""
    arr = np.asarray(bitmap)
    if arr.ndim != 2:
        raise InvalidArgumentError("mask must be 2-D")
    out = io.BytesIO()
    out.write(MASK_MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    out.write(struct.pack("<III", arr.shape[0], arr.shape[1], 1))
    out.write(arr.astype(bool).astype(np.uint8).tobytes())
    _write_atomic(path, out.getvalue())


def read_mask(path) -> np.ndarray:
    with _open_checked(path, MASK_MAGIC) as buf:
        h, w, c = struct.unpack("<III", _read_exact(buf, 12, "mask header", path))
        if c != 1:
            raise TruncatedFileError(f"{path}: mask channel count must be 1, got {c}")
        payload = _read_exact(buf, h * w, "mask payload", path)
        if buf.read(1):
            raise TruncatedFileError(f"{path}: trailing bytes after mask payload")
    raw = np.frombuffer(payload, dtype=np.uint8)
    if np.any(raw > 1):
        raise TruncatedFileError(f"{path}: mask bytes must be 0 or 1")
    return raw.reshape(h, w).astype(bool)


def write_depth(path, depth) -> None:
    arr = np.asarray(depth, dtype=np.float32)
    if arr.ndim != 2:
        raise InvalidArgumentError("depth must be 2-D")
    out = io.BytesIO()
    out.write(DEPTH_MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    out.write(struct.pack("<III", arr.shape[0], arr.shape[1], 1))
    out.write(arr.astype("<f4").tobytes())
    _write_atomic(path, out.getvalue())


def read_depth(path) -> np.ndarray:
    with _open_checked(path, DEPTH_MAGIC) as buf:
        h, w, c = struct.unpack("<III", _read_exact(buf, 12, "depth header", path))
        if c != 1:
            raise TruncatedFileError(f"{path}: depth channel count must be 1, got {c}")
        payload = _read_exact(buf, h * w * 4, "depth payload", path)
        if buf.read(1):
            raise TruncatedFileError(f"{path}: trailing bytes after depth payload")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).copy()


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors as a CMKA container, sorted by name."""
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    out.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float32)
        if arr.ndim > 0:
            arr = np.ascontiguousarray(arr)  # keeps 0-d tensors 0-d
        encoded = name.encode("utf-8")
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            out.write(struct.pack("<I", dim))
        out.write(arr.astype("<f4").tobytes())
    _write_atomic(path, out.getvalue())


def read_tensors(path) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    with _open_checked(path, CHECKPOINT_MAGIC) as buf:
        (count,) = struct.unpack("<I", _read_exact(buf, 4, "tensor count", path))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(buf, 2, "name length", path))
            name = _read_exact(buf, name_len, "tensor name", path).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(buf, 1, "rank", path))
            shape = tuple(
                struct.unpack("<I", _read_exact(buf, 4, "dimension", path))[0] for _ in range(ndim)
            )
            numel = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(buf, numel * 4, f"tensor {name}", path)
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if buf.read(1):
            raise TruncatedFileError(f"{path}: trailing bytes after last tensor")
    return tensors


_META_FIELDS = (
    "n_classes",
    "proj_dim",
    "hidden_dim",
    "fused_dim",
    "exo_channels",
    "cam_hidden",
    "regions",
    "clusters_per_region",
    "pca_dim",
    "radius",
)


def save_checkpoint(path, params: TrainedParams, train_seed: int = 0) -> None:
    """Serialize trained parameters plus the model spec needed to rebuild them.

    The training seed rides along so inference can rebuild candidate sets with
    the same clustering stream the selection weights were trained against.
    """
    spec = params.spec
    tensors = {name: arr for name, arr in params_to_arrays(params).items()}
    for fieldname in _META_FIELDS:
        tensors[f"meta/{fieldname}"] = np.asarray(float(getattr(spec, fieldname)))
    tensors["meta/layer_channels"] = np.asarray(spec.layer_channels, dtype=np.float64)
    tensors["meta/temperature"] = np.asarray(spec.temperature)
    tensors["meta/mlp_activation"] = np.asarray(_ACTIVATION_CODES[spec.mlp_activation])
    # split into 16-bit halves: float32 holds each exactly for any u32 seed
    tensors["meta/train_seed_lo"] = np.asarray(float(int(train_seed) & 0xFFFF))
    tensors["meta/train_seed_hi"] = np.asarray(float(int(train_seed) >> 16))
    write_tensors(path, tensors)


def load_checkpoint(path) -> tuple[TrainedParams, int]:
    """Read a checkpoint back; returns (params, train_seed)."""
    tensors = read_tensors(path)
    try:
        meta = {name: int(tensors[f"meta/{name}"]) for name in _META_FIELDS}
        layer_channels = tuple(int(v) for v in tensors["meta/layer_channels"])
        temperature = float(tensors["meta/temperature"])
        activation = _ACTIVATION_NAMES[float(tensors["meta/mlp_activation"])]
        train_seed = (int(tensors["meta/train_seed_hi"]) << 16) | int(tensors["meta/train_seed_lo"])
        spec = ModelSpec(
            layer_channels=layer_channels,
            temperature=temperature,
            mlp_activation=activation,
            **meta,
        )
        arrays = {
            name: arr.astype(np.float64) for name, arr in tensors.items() if not name.startswith("meta/")
        }
        return arrays_to_params(arrays, spec), train_seed
    except KeyError as exc:
        raise TruncatedFileError(f"{path}: checkpoint missing tensor {exc}") from exc
