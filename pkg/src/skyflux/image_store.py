"""
Core data containers and their on-disk formats.

The module defines the flux raster (`ImagePlane`), the tangent-plane
calibration (`WcsModel`), detected-object records (`SourceRecord`) and patch
provenance (`PairManifest`), together with all serialization:

* SFI raster container -- magic ``SFI1``, little-endian u32 header length,
  UTF-8 JSON header, then row-major little-endian f32 payload where NaN marks
  invalid pixels.  Round-trips are bit-exact, NaN payloads included.
* Source catalogs -- CSV with header ``id,x,y,a,b,theta,flux``; floats are
  written with shortest round-trip precision.
* Pair manifests -- a JSON array of patch records.

Pixel coordinate conventions: array indices are zero-based ``(row, col)``;
continuous pixel coordinates used by the WCS follow the FITS convention where
the center of the first pixel is ``(1.0, 1.0)`` and ``crpix`` is expressed in
those units.  ``x`` runs along columns, ``y`` along rows.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SFI_MAGIC = b"SFI1"

_HALF_PI = math.pi / 2.0


class FormatError(ValueError):
    """A file does not conform to the expected on-disk format."""


class InvariantError(ValueError):
    """A domain object failed its construction invariants."""


def normalize_theta(theta: float) -> float:
    """Wrap an ellipse position angle into (-pi/2, pi/2] (ellipses are pi-periodic)."""
    t = (theta + _HALF_PI) % math.pi - _HALF_PI
    if t <= -_HALF_PI:
        t += math.pi
    return t


@dataclass(frozen=True)
class WcsModel:
    """Tangent-plane (TAN / gnomonic) calibration mapping pixels to the sky.

    crpix : (x, y) reference pixel, FITS convention (first pixel center = 1.0).
    crval : (ra, dec) of the reference pixel in degrees; ra normalized to [0, 360).
    cd    : 2x2 linear transform in degrees per pixel, row-major
            ((c11, c12), (c21, c22)).
    """

    crpix: tuple[float, float]
    crval: tuple[float, float]
    cd: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        crpix = (float(self.crpix[0]), float(self.crpix[1]))
        ra, dec = float(self.crval[0]), float(self.crval[1])
        cd = tuple(tuple(float(v) for v in row) for row in self.cd)
        if len(cd) != 2 or any(len(row) != 2 for row in cd):
            raise InvariantError("cd must be a 2x2 matrix")
        if not all(math.isfinite(v) for row in cd for v in row):
            raise InvariantError("cd entries must be finite")
        det = cd[0][0] * cd[1][1] - cd[0][1] * cd[1][0]
        if det == 0.0:
            raise InvariantError("cd matrix is singular (det = 0)")
        if not (-90.0 <= dec <= 90.0):
            raise InvariantError(f"dec out of range: {dec}")
        if not math.isfinite(ra):
            raise InvariantError(f"ra not finite: {ra}")
        ra = ra % 360.0
        object.__setattr__(self, "crpix", crpix)
        object.__setattr__(self, "crval", (ra, dec))
        object.__setattr__(self, "cd", cd)

    @property
    def cd_matrix(self) -> np.ndarray:
        return np.array(self.cd, dtype=np.float64)

    @property
    def cd_det(self) -> float:
        return self.cd[0][0] * self.cd[1][1] - self.cd[0][1] * self.cd[1][0]


@dataclass(frozen=True)
class ImagePlane:
    """A 2D flux raster with WCS calibration; NaN marks invalid pixels.

    ``data`` is float32, shape (height, width), row-major.  The array is
    frozen after construction; operations return new instances.
    """

    width: int
    height: int
    data: np.ndarray
    wcs: WcsModel

    def __post_init__(self):
        w = int(self.width)
        h = int(self.height)
        if w < 1 or h < 1:
            raise InvariantError(f"image dims must be >= 1, got {w}x{h}")
        data = np.asarray(self.data)
        if data.dtype != np.float32:
            raise InvariantError(f"image payload must be float32, got {data.dtype}")
        if data.shape != (h, w):
            raise InvariantError(
                f"data shape {data.shape} does not match height x width = ({h}, {w})"
            )
        if np.isinf(data).any():
            raise InvariantError("image contains non-finite, non-NaN values")
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "height", h)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data: np.ndarray, wcs: WcsModel) -> "ImagePlane":
        arr = np.ascontiguousarray(np.asarray(data), dtype=np.float32)
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr, wcs=wcs)

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.data)

    def valid_fraction(self) -> float:
        return float(np.isfinite(self.data).mean())

    def sum_flux(self) -> float:
        """Total flux over valid pixels, accumulated in float64."""
        return float(np.nansum(self.data.astype(np.float64)))


@dataclass(frozen=True)
class SourceRecord:
    """One detected celestial object.

    x, y are the sub-pixel centroid in zero-based array coordinates (x along
    columns).  a, b are the semi-major/semi-minor axes in pixels with
    a >= b > 0, theta the position angle in radians, CCW from +x, normalized
    to (-pi/2, pi/2].  flux is the summed aperture flux; NaN when unmeasured.
    """

    id: int
    x: float
    y: float
    a: float
    b: float
    theta: float
    flux: float = math.nan

    def __post_init__(self):
        a = float(self.a)
        b = float(self.b)
        if not (a >= b > 0.0):
            raise InvariantError(f"require a >= b > 0, got a={a}, b={b}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "theta", normalize_theta(float(self.theta)))
        object.__setattr__(self, "flux", float(self.flux))
        object.__setattr__(self, "id", int(self.id))


@dataclass(frozen=True)
class PairManifest:
    """Provenance of one HR/LR training pair."""

    hr_path: str
    lr_path: str
    scale: int
    psf: "object"  # PsfSpec; typed loosely to avoid an import cycle
    patch_origin: tuple[int, int]  # (row, col) in the parent HR image
    valid_fraction: float

    def __post_init__(self):
        if int(self.scale) < 2:
            raise InvariantError(f"scale must be an integer >= 2, got {self.scale}")
        vf = float(self.valid_fraction)
        if not (0.0 <= vf <= 1.0):
            raise InvariantError(f"valid_fraction out of [0, 1]: {vf}")
        object.__setattr__(self, "scale", int(self.scale))
        object.__setattr__(self, "patch_origin",
                           (int(self.patch_origin[0]), int(self.patch_origin[1])))
        object.__setattr__(self, "valid_fraction", vf)

    def to_dict(self) -> dict:
        return {
            "hr_path": self.hr_path,
            "lr_path": self.lr_path,
            "scale": self.scale,
            "psf": self.psf.to_dict(),
            "patch_origin": list(self.patch_origin),
            "valid_fraction": self.valid_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairManifest":
        from .psf_sim import PsfSpec

        return cls(
            hr_path=d["hr_path"],
            lr_path=d["lr_path"],
            scale=d["scale"],
            psf=PsfSpec.from_dict(d["psf"]),
            patch_origin=tuple(d["patch_origin"]),
            valid_fraction=d["valid_fraction"],
        )


# ---------------------------------------------------------------------------
# SFI raster container
# ---------------------------------------------------------------------------

def _wcs_header(wcs: WcsModel) -> dict:
    return {
        "crpix": [wcs.crpix[0], wcs.crpix[1]],
        "crval": [wcs.crval[0], wcs.crval[1]],
        "cd": [[wcs.cd[0][0], wcs.cd[0][1]], [wcs.cd[1][0], wcs.cd[1][1]]],
    }


def write_image(img: ImagePlane, path) -> None:
    """Write an ImagePlane to `path` in the SFI container format."""
    header = {
        "width": img.width,
        "height": img.height,
        "dtype": "f32",
        "order": "row-major",
        "wcs": _wcs_header(img.wcs),
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(img.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(SFI_MAGIC)
        fh.write(struct.pack("<I", len(hjson)))
        fh.write(hjson)
        fh.write(payload)


def read_image(path) -> ImagePlane:
    """Read an SFI container; raises FormatError / InvariantError on bad files."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise FormatError(f"{path}: file too short for an SFI header")
    if blob[:4] != SFI_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    for key in ("width", "height", "dtype", "order", "wcs"):
        if key not in header:
            raise FormatError(f"{path}: header missing key {key!r}")
    if header["dtype"] != "f32":
        raise FormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    if header["order"] != "row-major":
        raise FormatError(f"{path}: unsupported order {header['order']!r}")
    width = int(header["width"])
    height = int(header["height"])
    expected = 4 * width * height
    data_bytes = blob[8 + hlen:]
    if len(data_bytes) != expected:
        raise FormatError(
            f"{path}: data length mismatch, expected {expected} bytes, "
            f"got {len(data_bytes)}"
        )
    w = header["wcs"]
    wcs = WcsModel(crpix=tuple(w["crpix"]), crval=tuple(w["crval"]),
                   cd=tuple(tuple(row) for row in w["cd"]))
    data = np.frombuffer(data_bytes, dtype="<f4").reshape(height, width)
    return ImagePlane(width=width, height=height,
                      data=data.astype(np.float32, copy=True), wcs=wcs)


# ---------------------------------------------------------------------------
# Source catalogs
# ---------------------------------------------------------------------------

CATALOG_HEADER = ["id", "x", "y", "a", "b", "theta", "flux"]


def write_catalog(sources: Sequence[SourceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CATALOG_HEADER)
        for s in sources:
            writer.writerow([s.id, repr(s.x), repr(s.y), repr(s.a), repr(s.b),
                             repr(s.theta), repr(s.flux)])


def read_catalog(path) -> list[SourceRecord]:
    out: list[SourceRecord] = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CATALOG_HEADER:
            raise FormatError(f"{path}: bad catalog header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CATALOG_HEADER):
                raise FormatError(f"{path}:{lineno}: expected "
                                  f"{len(CATALOG_HEADER)} fields, got {len(row)}")
            try:
                rec = SourceRecord(id=int(row[0]), x=float(row[1]), y=float(row[2]),
                                   a=float(row[3]), b=float(row[4]),
                                   theta=float(row[5]), flux=float(row[6]))
            except ValueError as exc:
                if isinstance(exc, InvariantError):
                    raise
                raise FormatError(f"{path}:{lineno}: malformed row: {exc}") from exc
            out.append(rec)
    return out


# ---------------------------------------------------------------------------
# Pair manifests
# ---------------------------------------------------------------------------

def write_manifest(manifests: Iterable[PairManifest], path) -> None:
    records = [m.to_dict() for m in manifests]
    with open(path, "w") as fh:
        json.dump(records, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_manifest(path) -> list[PairManifest]:
    with open(path) as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise FormatError(f"{path}: manifest must be a JSON array")
    return [PairManifest.from_dict(r) for r in records]
