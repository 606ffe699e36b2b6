"""Versioned binary container for matrices and fitted models.

Layout (all integers little-endian)::

    8 bytes   magic  b"TRCNTR\\x00\\x01"
    8 bytes   uint64 length of the JSON header
    N bytes   UTF-8 JSON header, keys sorted
    ...       array payloads, each C-contiguous little-endian, 8-byte aligned

The header carries a ``format_version``, caller metadata under ``meta`` and an
``arrays`` table giving name, dtype, shape, offset and byte length for every
payload. Writing the same header and arrays always yields the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ValidationError

MAGIC = b"TRCNTR\x00\x01"
FORMAT_VERSION = 1
_ALIGN = 8
_DTYPES = {"f8": "<f8", "i8": "<i8", "i4": "<i4", "u1": "|u1"}


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _normalise_array(arr: np.ndarray) -> tuple[str, np.ndarray]:
    arr = np.asarray(arr)
    kind = arr.dtype.kind
    if kind == "f":
        code = "f8"
    elif kind in "iu" and arr.dtype != np.uint8:
        code = "i8"
    elif kind == "b" or arr.dtype == np.uint8:
        code = "u1"
    else:
        raise ValidationError(f"unsupported array dtype {arr.dtype}")
    return code, np.ascontiguousarray(arr, dtype=_DTYPES[code])


def dumps(meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    table = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        code, arr = _normalise_array(arrays[name])
        raw = arr.tobytes(order="C")
        pad = (-len(raw)) % _ALIGN
        table.append(
            {"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        payloads.append(raw + b"\x00" * pad)
        offset += len(raw) + pad
    header = {"format_version": FORMAT_VERSION, "meta": dict(meta), "arrays": table}
    hbytes = canonical_json(header).encode("utf-8")
    hbytes += b" " * ((-len(hbytes)) % _ALIGN)
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(payloads)


def loads(data: bytes, *, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    if data[:8] != MAGIC:
        raise ValidationError(f"{source}: not a trialrank container (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"{source}: container format version {header.get('format_version')} "
            f"is not supported (expected {FORMAT_VERSION})"
        )
    base = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        buf = data[start : start + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return header["meta"], arrays


def save(path: str | os.PathLike, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> str:
    """Atomically write a container; returns the sha256 of the bytes written."""
    data = dumps(meta, arrays)
    atomic_write_bytes(path, data)
    return sha256_bytes(data)


def load(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    return loads(data, source=str(path))
