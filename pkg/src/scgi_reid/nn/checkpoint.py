"""Versioned binary container mapping name strings to raw little-endian arrays.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON header,
then the concatenated array payloads. The header records, per tensor, its
name, dtype, shape and byte offset; ``meta`` carries arbitrary JSON. Writing
the same arrays and meta twice produces byte-identical files, so a
save -> load -> save round trip is exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"SCGICON1"
CONTAINER_VERSION = 1


def _little_endian(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save_container(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        arr = _little_endian(np.asarray(arrays[name]))
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.newbyteorder("<").str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"container_version": CONTAINER_VERSION, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ParseError(f"{path}: not a container file (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt container header: {exc}") from exc
    if header.get("container_version") != CONTAINER_VERSION:
        raise ParseError(f"{path}: unsupported container version {header.get('container_version')}")
    base = 16 + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = blob[start:start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        arrays[entry["name"]] = arr
    return arrays, header["meta"]


def strip_parameters(arrays: dict[str, np.ndarray], prefixes: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Drop every entry whose name starts with one of ``prefixes``."""
    return {k: v for k, v in arrays.items() if not k.startswith(prefixes)}


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
