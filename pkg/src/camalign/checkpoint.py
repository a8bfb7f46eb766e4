"""Flat binary parameter archives.

Layout (all integers little-endian):
    magic "FTAR" | version u8 | count u32
    per record: name_len u16 | name utf-8 | ndim u8 | dims u32... | float64 data
Record order is preserved so checkpoints are byte-reproducible.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FTAR"
VERSION = 1


def save_params(path, params: dict) -> None:
    """``params`` maps names to float arrays (or Tensors with ``.data``)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", VERSION, len(params)))
        for name, value in params.items():
            arr = np.asarray(getattr(value, "data", value), dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes(order="C"))


def load_params(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a parameter archive (bad magic)")
        version, count = struct.unpack("<BI", fh.read(5))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported archive version {version}")
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            params[name] = data.astype(np.float64)
        return params
