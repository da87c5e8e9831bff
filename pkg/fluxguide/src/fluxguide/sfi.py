"""
Minimal reader/writer for the SFI raster container.

Implements the documented on-disk format directly (magic ``SFI1``,
little-endian u32 header length, JSON header, row-major little-endian f32
payload) so this package depends only on the producing pipeline's external
interfaces, not on its code.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SFI1"

IDENTITY_WCS = {"crpix": [1.0, 1.0], "crval": [0.0, 0.0],
                "cd": [[1.0, 0.0], [0.0, 1.0]]}


def read_sfi(path) -> tuple[np.ndarray, dict]:
    """Return (float32 array of shape (height, width), wcs header dict)."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an SFI file")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    if header["dtype"] != "f32" or header["order"] != "row-major":
        raise ValueError(f"{path}: unsupported payload encoding")
    h, w = int(header["height"]), int(header["width"])
    data = np.frombuffer(blob[8 + hlen:], dtype="<f4")
    if data.size != h * w:
        raise ValueError(f"{path}: payload length mismatch")
    return data.reshape(h, w).copy(), header["wcs"]


def write_sfi(data: np.ndarray, path, wcs: dict | None = None) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    header = {
        "width": arr.shape[1],
        "height": arr.shape[0],
        "dtype": "f32",
        "order": "row-major",
        "wcs": wcs if wcs is not None else IDENTITY_WCS,
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hjson)))
        fh.write(hjson)
        fh.write(arr.tobytes())
