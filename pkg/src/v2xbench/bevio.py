"""BEV tensor files: ``BEVT`` magic, u32 version, u32 C/H/W, then little-endian
float32 cells in (C, H, W) order.  A JSON sidecar carries channel names and
grid bounds."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .raster import BevTensor, ChannelLayout, GridSpec, NormalizationSpec
from .scene import ObjectClass

MAGIC = b"BEVT"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class BevFormatError(ValueError):
    pass


def encode_bev(data: np.ndarray) -> bytes:
    if data.ndim != 3:
        raise ValueError("BEV tensor must be (C, H, W)")
    c, h, w = data.shape
    return _HEADER.pack(MAGIC, VERSION, c, h, w) + np.ascontiguousarray(data, dtype="<f4").tobytes()


def decode_bev(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise BevFormatError("file too short for BEVT header")
    magic, version, c, h, w = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BevFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BevFormatError(f"unsupported BEVT version {version}")
    n = c * h * w
    if len(blob) != _HEADER.size + 4 * n:
        raise BevFormatError(f"payload size mismatch: expected {4 * n} bytes, got {len(blob) - _HEADER.size}")
    return np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(c, h, w).astype(np.float32)


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def sidecar(tensor: BevTensor) -> dict:
    return {
        "format": "BEVT",
        "version": VERSION,
        "shape": list(tensor.data.shape),
        "channels": tensor.layout.channel_names,
        "classes": [c.label for c in tensor.layout.classes],
        "grid": tensor.grid.to_dict(),
        "normalization": tensor.norm.to_dict(),
        "n_skipped": tensor.n_skipped,
        "row_axis": "y",
        "col_axis": "x",
    }


def save_bev(tensor: BevTensor, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(encode_bev(tensor.data))
    sidecar_path(path).write_text(json.dumps(sidecar(tensor), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_bev(path: str | Path) -> BevTensor:
    path = Path(path)
    data = decode_bev(path.read_bytes())
    meta_file = sidecar_path(path)
    if not meta_file.exists():
        raise BevFormatError(f"missing sidecar {meta_file}")
    meta = json.loads(meta_file.read_text(encoding="utf-8"))
    g = meta["grid"]
    grid = GridSpec(g["x_min"], g["x_max"], g["y_min"], g["y_max"], g["resolution"])
    layout = ChannelLayout(tuple(ObjectClass.parse(c) for c in meta["classes"]))
    n = meta.get("normalization", {})
    norm = NormalizationSpec(**n) if n else NormalizationSpec()
    if data.shape != (layout.n_channels, grid.height, grid.width):
        raise BevFormatError(f"tensor shape {data.shape} disagrees with sidecar")
    return BevTensor(data, grid, layout, norm, int(meta.get("n_skipped", 0)))
