"""Binary tensor container and named-record archives.

Record layout: magic ``BBF1`` (4 bytes), little-endian u32 rank, u32 dims,
u8 dtype tag (0 = float32 LE, 1 = uint8), then the raw array data in C order.
An archive is a flat file of concatenated records plus a sibling JSON
manifest (``<path>.manifest.json``) listing record names, byte offsets,
shapes and dtypes, with an optional free-form ``meta`` section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BBF1"

_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_DTYPE_TO_TAG = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


class FormatError(Exception):
    """Raised when a container file does not parse."""


def write_tensor(fh, arr: np.ndarray) -> int:
    """Append one tensor record at the current position; returns its offset."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_TO_TAG:
        raise ValueError(
            f"unsupported dtype {arr.dtype}; cast to float32 or uint8 first"
        )
    offset = fh.tell()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(struct.pack("B", _DTYPE_TO_TAG[arr.dtype]))
    fh.write(arr.tobytes())
    return offset


def read_tensor(fh) -> np.ndarray:
    """Read one tensor record at the current position."""
    offset = fh.tell()
    magic = fh.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte offset {offset}")
    (rank,) = struct.unpack("<I", fh.read(4))
    if rank > 16:
        raise FormatError(f"implausible rank {rank} at byte offset {offset}")
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    (tag,) = struct.unpack("B", fh.read(1))
    if tag not in _TAG_TO_DTYPE:
        raise FormatError(f"unknown dtype tag {tag} at byte offset {offset}")
    dtype = _TAG_TO_DTYPE[tag]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise FormatError(f"truncated record at byte offset {offset}")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).copy()


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


def write_archive(path, records: dict[str, np.ndarray], meta: dict | None = None) -> dict:
    """Write named tensors to ``path`` and a JSON manifest next to it."""
    path = Path(path)
    entries = []
    with open(path, "wb") as fh:
        for name, arr in records.items():
            offset = write_tensor(fh, arr)
            entries.append(
                {
                    "name": name,
                    "offset": offset,
                    "shape": list(arr.shape),
                    "dtype": str(np.asarray(arr).dtype),
                }
            )
    manifest = {"format": "bbf-archive", "count": len(entries), "records": entries}
    if meta is not None:
        manifest["meta"] = meta
    with open(manifest_path(path), "w") as fh:
        json.dump(manifest, fh, indent=1, default=_json_default)
        fh.write("\n")
    return manifest


def read_manifest(path) -> dict:
    mpath = manifest_path(path)
    if not mpath.exists():
        raise FormatError(f"missing manifest {mpath}")
    with open(mpath) as fh:
        return json.load(fh)


def read_archive(path, names=None) -> tuple[dict[str, np.ndarray], dict]:
    """Read (all or selected) named tensors; returns (records, meta)."""
    path = Path(path)
    manifest = read_manifest(path)
    wanted = None if names is None else set(names)
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        for entry in manifest["records"]:
            if wanted is not None and entry["name"] not in wanted:
                continue
            fh.seek(entry["offset"])
            out[entry["name"]] = read_tensor(fh)
    if wanted is not None:
        missing = wanted - out.keys()
        if missing:
            raise KeyError(f"records not in archive: {sorted(missing)}")
    return out, manifest.get("meta", {})


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
