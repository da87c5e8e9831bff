"""
Source detection and elliptical-aperture photometry.

Detection follows the familiar extractor recipe: sigma-clipped background,
thresholding, 8-connected components, moment-based ellipse parameters.
Fluxes are background-subtracted sums over a scaled ellipse whose shape comes
from the second central moments.  All thresholds and scale factors live in
DetectionParams since conventions differ between toolkits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image_store import ImagePlane, InvariantError, SourceRecord, normalize_theta

# 8-connectivity structure for component labeling.
_STRUCT8 = np.ones((3, 3), dtype=bool)

# Semi-axes from moments are floored here; single-pixel components otherwise
# collapse to zero-size ellipses.
MIN_AXIS_PX = 0.3


class PhotometryError(ValueError):
    """Photometry cannot proceed (empty aperture, unusable image)."""


@dataclass(frozen=True)
class Background:
    level: float
    noise_sigma: float

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise InvariantError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class DetectionParams:
    """Free parameters of detection and aperture photometry."""

    thresh_sigma: float = 1.5
    min_area: int = 5
    aperture_k: float = 6.0
    clip_iters: int = 5

    def __post_init__(self):
        if self.thresh_sigma <= 0:
            raise InvariantError("thresh_sigma must be > 0")
        if self.min_area < 1:
            raise InvariantError("min_area must be >= 1")
        if self.aperture_k <= 0:
            raise InvariantError("aperture_k must be > 0")


def estimate_background(img: ImagePlane,
                        params: DetectionParams = DetectionParams()) -> Background:
    """Iterative 3-sigma-clipped median and standard deviation over valid pixels."""
    values = img.data[np.isfinite(img.data)].astype(np.float64)
    if values.size < 10:
        raise PhotometryError("need at least 10 valid pixels to estimate background")
    for _ in range(params.clip_iters):
        med = np.median(values)
        sig = values.std()
        keep = np.abs(values - med) <= 3.0 * sig
        if keep.all():
            break
        values = values[keep]
        if values.size < 10:
            break
    return Background(level=float(np.median(values)), noise_sigma=float(values.std()))


def detect_sources(img: ImagePlane,
                   params: DetectionParams = DetectionParams()
                   ) -> list[SourceRecord]:
    """Detect sources as 8-connected components above the clipped threshold.

    Returns SourceRecords ordered by descending peak value with the flux
    field unfilled; centroids and ellipse parameters come from flux-weighted
    first and second central moments of the background-subtracted pixels.
    """
    background = estimate_background(img, params)
    data = img.data.astype(np.float64)
    thresh = background.level + params.thresh_sigma * background.noise_sigma
    with np.errstate(invalid="ignore"):
        mask = data > thresh
    labels, n_labels = ndimage.label(mask, structure=_STRUCT8)
    if n_labels == 0:
        return []

    sizes = np.bincount(labels.ravel())[1:]
    keep_ids = np.nonzero(sizes >= params.min_area)[0] + 1
    if keep_ids.size == 0:
        return []

    records = []
    slices = ndimage.find_objects(labels)
    for lab in keep_ids:
        sl = slices[lab - 1]
        sub = data[sl]
        sub_mask = labels[sl] == lab
        w = np.where(sub_mask, sub - background.level, 0.0)
        wsum = w.sum()
        ys, xs = np.nonzero(sub_mask)
        yy = ys + sl[0].start
        xx = xs + sl[1].start
        wv = w[ys, xs]
        xbar = float((wv * xx).sum() / wsum)
        ybar = float((wv * yy).sum() / wsum)
        dx = xx - xbar
        dy = yy - ybar
        mxx = float((wv * dx * dx).sum() / wsum)
        myy = float((wv * dy * dy).sum() / wsum)
        mxy = float((wv * dx * dy).sum() / wsum)
        half_trace = 0.5 * (mxx + myy)
        disc = math.sqrt(max(0.25 * (mxx - myy) ** 2 + mxy * mxy, 0.0))
        a = max(math.sqrt(max(half_trace + disc, 0.0)), MIN_AXIS_PX)
        b = max(math.sqrt(max(half_trace - disc, 0.0)), MIN_AXIS_PX)
        if abs(mxy) < 1e-12 and abs(mxx - myy) < 1e-12:
            theta = 0.0  # circular by convention
        else:
            theta = normalize_theta(0.5 * math.atan2(2.0 * mxy, mxx - myy))
        peak = float(sub[sub_mask].max())
        records.append((peak, xbar, ybar, a, b, theta))

    records.sort(key=lambda r: -r[0])
    return [SourceRecord(id=i + 1, x=r[1], y=r[2], a=r[3], b=r[4], theta=r[5])
            for i, r in enumerate(records)]


def aperture_mask(img: ImagePlane, src: SourceRecord, k: float) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the k-scaled ellipse."""
    rmax = k * src.a
    x0 = max(int(math.floor(src.x - rmax)), 0)
    x1 = min(int(math.ceil(src.x + rmax)) + 1, img.width)
    y0 = max(int(math.floor(src.y - rmax)), 0)
    y1 = min(int(math.ceil(src.y + rmax)) + 1, img.height)
    if x0 >= x1 or y0 >= y1:
        raise PhotometryError("aperture fully outside image")
    mask = np.zeros((img.height, img.width), dtype=bool)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = xs - src.x
    dy = ys - src.y
    ct = math.cos(src.theta)
    st = math.sin(src.theta)
    xr = dx * ct + dy * st
    yr = -dx * st + dy * ct
    inside = (xr / (k * src.a)) ** 2 + (yr / (k * src.b)) ** 2 <= 1.0
    mask[y0:y1, x0:x1] = inside
    if not mask.any():
        raise PhotometryError("aperture fully outside image")
    return mask


def aperture_stats(img: ImagePlane, src: SourceRecord,
                   params: DetectionParams = DetectionParams(),
                   background: Background | None = None
                   ) -> tuple[float, int, float]:
    """Aperture sum plus pixel count and bad-pixel fraction.

    Returns (flux, n_pixels, bad_fraction).  NaN pixels contribute zero flux
    and are counted in bad_fraction.
    """
    if background is None:
        background = estimate_background(img, params)
    mask = aperture_mask(img, src, params.aperture_k)
    vals = img.data[mask].astype(np.float64)
    bad = ~np.isfinite(vals)
    flux = float(np.where(bad, 0.0, vals - background.level).sum())
    return flux, int(vals.size), float(bad.mean())


def measure_flux(img: ImagePlane, src: SourceRecord,
                 params: DetectionParams = DetectionParams(),
                 background: Background | None = None) -> float:
    """Background-subtracted flux inside the k-scaled ellipse of ``src``.

    The background is estimated from the image when not supplied.
    """
    flux, _, _ = aperture_stats(img, src, params, background)
    return flux


def photometer_with_catalog(img: ImagePlane, catalog: list[SourceRecord],
                            params: DetectionParams = DetectionParams(),
                            background: Background | None = None) -> list[float]:
    """Measure fluxes at fixed catalog positions/ellipses, no re-detection.

    The default background is zero: catalog-driven photometry compares raw
    aperture sums across frames measured with identical apertures, so a
    frame-dependent background estimate would silently cancel offsets the
    caller may want to see.  Pass a Background to subtract one explicitly.
    """
    if background is None:
        background = Background(level=0.0, noise_sigma=0.0)
    for src in catalog:
        if not (0 <= src.x < img.width and 0 <= src.y < img.height):
            raise PhotometryError(
                f"catalog source {src.id} at ({src.x}, {src.y}) is outside the "
                f"{img.width}x{img.height} frame")
    return [measure_flux(img, src, params, background) for src in catalog]


def measure_catalog(img: ImagePlane, catalog: list[SourceRecord],
                    params: DetectionParams = DetectionParams(),
                    background: Background | None = None) -> list[SourceRecord]:
    """Return the catalog with flux fields filled from this image."""
    from dataclasses import replace

    if background is None:
        background = estimate_background(img, params)
    fluxes = photometer_with_catalog(img, catalog, params, background)
    return [replace(src, flux=flux) for src, flux in zip(catalog, fluxes)]
