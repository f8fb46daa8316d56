"""Named-array checkpoint archive.

Layout: 8-byte magic, little-endian uint64 header length, JSON header, raw
array payload. The header maps dotted array names to dtype/shape/offset; array
bytes are little-endian and tightly packed in header order.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"MMADARC1"
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "|u1", "int32": "<i4"}


def save_archive(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Write arrays atomically (temp file + rename)."""
    path = Path(path)
    entries = []
    payload = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise CheckpointError(f"array {name!r}: unsupported dtype {arr.dtype}")
        raw = arr.astype(_DTYPES[arr.dtype.name]).tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape), "offset": offset}
        )
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"version": 1, "meta": meta or {}, "arrays": entries}).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for raw in payload:
            f.write(raw)
    os.replace(tmp, path)


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read the full archive; raises CheckpointError on any corruption."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read archive {path}: {e}") from e
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a named-array archive")
    header_len = int.from_bytes(blob[len(MAGIC) : len(MAGIC) + 8], "little")
    body_start = len(MAGIC) + 8
    if body_start + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[body_start : body_start + header_len])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    if header.get("version") != 1 or "arrays" not in header:
        raise CheckpointError(f"{path}: unsupported archive header")
    data_start = body_start + header_len
    arrays = {}
    for entry in header["arrays"]:
        try:
            name, dtype, shape, offset = entry["name"], entry["dtype"], entry["shape"], entry["offset"]
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"{path}: malformed array entry {entry!r}") from e
        if dtype not in _DTYPES:
            raise CheckpointError(f"{path}: array {name!r} has unsupported dtype {dtype}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(_DTYPES[dtype]).itemsize
        start = data_start + offset
        if start + nbytes > len(blob):
            raise CheckpointError(f"{path}: array {name!r} extends past end of file")
        arrays[name] = (
            np.frombuffer(blob, dtype=_DTYPES[dtype], count=count, offset=start)
            .reshape(shape)
            .astype(dtype)
        )
    return arrays, header.get("meta", {})
