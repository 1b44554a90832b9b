"""Flat binary container for spectrogram images and trained models.

Layout (all integers little-endian)::

    magic      4 bytes   b"AEDC"
    version    uint16
    hdr_len    uint32
    header     hdr_len bytes of UTF-8 JSON: {"kind", "meta", "tensors"}
    payload    tensors back to back, row-major, in header order

Each entry of ``tensors`` is ``{"name", "dtype", "shape"}`` with dtype one of
``<f4``, ``<f8``, ``<i4``, ``<i8``.  Neural network parameters are always
stored as ``<f4``.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"AEDC"
VERSION = 1
_DTYPES = {"<f4", "<f8", "<i4", "<i8"}


def write_container(path, kind, meta, tensors):
    """Write `tensors` (sequence of (name, array) or dict) under `kind`."""
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    specs, blobs = [], []
    for name, arr in items:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<").str
        if dt not in _DTYPES:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        specs.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    header = json.dumps({"kind": kind, "meta": meta, "tensors": specs},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_container(path):
    """Return ``(kind, meta, {name: array})`` from a container file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not an AEDC container")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    off = 10
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    tensors = {}
    for spec in header["tensors"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(spec["shape"])
        tensors[spec["name"]] = arr.astype(dt.newbyteorder("="))
        off += count * dt.itemsize
    if off != len(raw):
        raise DataError(f"{path}: trailing or missing payload bytes")
    return header["kind"], header["meta"], tensors
