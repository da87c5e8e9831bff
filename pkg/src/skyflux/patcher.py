"""
Subdivision of HR/LR pairs into training patches.

Patches tile the HR image on a stride grid; a patch survives only when both
crops are sufficiently valid and the HR crop actually contains detectable
sources.  Cropping shifts crpix so every patch keeps a correct calibration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image_store import ImagePlane, InvariantError, PairManifest, WcsModel
from .photometry import DetectionParams, PhotometryError, detect_sources


@dataclass(frozen=True)
class PatchSpec:
    """Patch geometry and retention rules."""

    hr_patch: int = 256
    stride: int = 256
    min_valid: float = 0.8
    min_sources: int = 1

    def __post_init__(self):
        if self.hr_patch < 1 or self.stride < 1:
            raise InvariantError("hr_patch and stride must be >= 1")
        if not (0.0 < self.min_valid <= 1.0):
            raise InvariantError("min_valid must be in (0, 1]")
        if self.min_sources < 0:
            raise InvariantError("min_sources must be >= 0")


def crop_image(img: ImagePlane, row: int, col: int, height: int, width: int
               ) -> ImagePlane:
    """Crop with the WCS reference pixel shifted to the new origin."""
    if row < 0 or col < 0 or row + height > img.height or col + width > img.width:
        raise InvariantError("crop outside image bounds")
    wcs = WcsModel(crpix=(img.wcs.crpix[0] - col, img.wcs.crpix[1] - row),
                   crval=img.wcs.crval, cd=img.wcs.cd)
    return ImagePlane.from_array(img.data[row:row + height, col:col + width], wcs)


def subdivide(hr: ImagePlane, lr: ImagePlane, s: int, spec: PatchSpec,
              detection: DetectionParams = DetectionParams(),
              tile: str = "tile", psf=None
              ) -> tuple[list[tuple[ImagePlane, ImagePlane, PairManifest]], dict]:
    """Split an HR/LR pair into retained patch pairs.

    The HR crop at (r, c) pairs with the LR crop at (r/s, c/s); both the
    patch size and the stride must be divisible by s so the grids stay
    aligned.  Returns the retained (hr_patch, lr_patch, manifest) triples and
    a rejection-count summary.  Deterministic: no randomness is involved.
    """
    s = int(s)
    if s < 2:
        raise InvariantError(f"scale must be >= 2, got {s}")
    if lr.height * s != hr.height or lr.width * s != hr.width:
        raise InvariantError(
            f"lr dims {lr.height}x{lr.width} are not hr dims / {s}")
    if spec.hr_patch % s != 0 or spec.stride % s != 0:
        raise InvariantError("hr_patch and stride must be divisible by s")
    if spec.hr_patch > min(hr.height, hr.width):
        raise InvariantError("patch larger than image")

    if psf is None:
        from .psf_sim import PsfSpec

        psf = PsfSpec(kind="gaussian", sigma=1.0)

    p = spec.hr_patch
    retained: list[tuple[ImagePlane, ImagePlane, PairManifest]] = []
    rejections = {"low_valid_fraction": 0, "no_sources": 0}
    for r in range(0, hr.height - p + 1, spec.stride):
        for c in range(0, hr.width - p + 1, spec.stride):
            hr_crop = crop_image(hr, r, c, p, p)
            lr_crop = crop_image(lr, r // s, c // s, p // s, p // s)
            hr_frac = hr_crop.valid_fraction()
            lr_frac = lr_crop.valid_fraction()
            frac = min(hr_frac, lr_frac)
            if not (hr_frac > spec.min_valid and lr_frac > spec.min_valid):
                rejections["low_valid_fraction"] += 1
                continue
            try:
                n_src = len(detect_sources(hr_crop, detection))
            except PhotometryError:
                n_src = 0
            if n_src < spec.min_sources:
                rejections["no_sources"] += 1
                continue
            manifest = PairManifest(
                hr_path=f"{tile}_{r}_{c}_hr.sfi",
                lr_path=f"{tile}_{r}_{c}_lr.sfi",
                scale=s, psf=psf, patch_origin=(r, c), valid_fraction=frac)
            retained.append((hr_crop, lr_crop, manifest))
    return retained, rejections
