"""Standalone SFV1 writer.

The retrieval engine consumes this byte layout (all integers little-endian
u32, floats little-endian binary32):

    magic "SFV1" | dim | rows | reserved=0
    rows*dim floats, row-major
    rows label indices
    category count | per category: byte length + UTF-8 name

Implemented here against the format contract rather than imported, so the
extractor stays deployable without the engine installed.
"""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"SFV1"
_U32 = struct.Struct("<I")


def write_sfv(values: np.ndarray, labels: np.ndarray, names: list[str], path) -> None:
    values = np.ascontiguousarray(values, dtype=np.float32)
    labels = np.ascontiguousarray(labels, dtype=np.uint32)
    if values.ndim != 2 or values.shape[1] < 1:
        raise ValueError(f"values must be 2-D with dim >= 1, got {values.shape}")
    if labels.shape != (values.shape[0],):
        raise ValueError("one label per row required")
    if labels.size and labels.max() >= len(names):
        raise ValueError("label outside the category manifest")
    if not np.isfinite(values).all():
        raise ValueError("refusing to write non-finite feature values")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_U32.pack(values.shape[1]))
        fh.write(_U32.pack(values.shape[0]))
        fh.write(_U32.pack(0))
        fh.write(values.astype("<f4", copy=False).tobytes())
        fh.write(labels.astype("<u4", copy=False).tobytes())
        fh.write(_U32.pack(len(names)))
        for name in names:
            raw = name.encode("utf-8")
            fh.write(_U32.pack(len(raw)))
            fh.write(raw)
