"""
Evaluation metrics: per-source flux error, PSNR, SSIM, and region-wise
KL/JS divergence of intensity histograms.

The flux error uses the two-step protocol: detect and measure on the ground
truth, then re-measure the prediction with the ground-truth apertures (no
re-detection), and average the absolute per-source differences.  PSNR/SSIM
use the per-pair ground-truth value range as the dynamic range, since float
astronomical frames have no fixed peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .image_store import ImagePlane, InvariantError
from .photometry import (Background, DetectionParams, detect_sources,
                         estimate_background, photometer_with_catalog)

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

HIST_EPS = 1e-12
DEFAULT_BINS = 64


class NoSourcesError(ValueError):
    """Flux error is undefined: no sources detected in the ground truth."""


def _check_same_dims(gt: ImagePlane, pred: ImagePlane):
    if (gt.height, gt.width) != (pred.height, pred.width):
        raise InvariantError(
            f"image dims differ: {gt.height}x{gt.width} vs {pred.height}x{pred.width}")


def data_range(gt: ImagePlane) -> float:
    """Ground-truth value range over valid pixels."""
    vals = gt.data[np.isfinite(gt.data)]
    if vals.size == 0:
        raise InvariantError("no valid pixels")
    return float(vals.max().astype(np.float64) - vals.min().astype(np.float64))


def flux_error(gt: ImagePlane, pred: ImagePlane,
               params: DetectionParams = DetectionParams()
               ) -> tuple[float, int]:
    """Mean absolute per-source flux difference, gt-derived apertures.

    Step 1 detects on gt and measures its fluxes; step 2 measures pred with
    the same catalog, apertures, and gt background.  Returns (fe, n_sources).
    """
    _check_same_dims(gt, pred)
    catalog = detect_sources(gt, params)
    if not catalog:
        raise NoSourcesError("no sources detected in the ground-truth image")
    bg = estimate_background(gt, params)
    v_gt = np.array(photometer_with_catalog(gt, catalog, params, bg))
    v_pred = np.array(photometer_with_catalog(pred, catalog, params, bg))
    fe = float(np.abs(v_gt - v_pred).mean())
    return fe, len(catalog)


def psnr(gt: ImagePlane, pred: ImagePlane) -> float:
    """10 log10(range^2 / MSE) with the gt valid-pixel range; inf when equal."""
    _check_same_dims(gt, pred)
    rng = data_range(gt)
    if rng == 0.0:
        raise InvariantError("zero data range: PSNR undefined")
    shared = np.isfinite(gt.data) & np.isfinite(pred.data)
    if not shared.any():
        raise InvariantError("no shared valid pixels")
    diff = (gt.data.astype(np.float64) - pred.data.astype(np.float64))[shared]
    mse = float((diff * diff).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(rng * rng / mse)


def _ssim_window() -> np.ndarray:
    half = SSIM_WIN // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords * coords) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(gt: ImagePlane, pred: ImagePlane) -> float:
    """Mean local SSIM, 11x11 sigma-1.5 Gaussian window, K1=0.01, K2=0.03.

    The dynamic range is the gt valid-pixel range; windows touching a NaN in
    either image are skipped, as is the half-window boundary ring.
    """
    _check_same_dims(gt, pred)
    if gt.height < SSIM_WIN or gt.width < SSIM_WIN:
        raise InvariantError(f"images must be at least {SSIM_WIN}x{SSIM_WIN}")
    rng = data_range(gt)
    if rng == 0.0:
        raise InvariantError("zero data range: SSIM undefined")

    x = gt.data.astype(np.float64)
    y = pred.data.astype(np.float64)
    invalid = ~(np.isfinite(x) & np.isfinite(y))
    x = np.where(invalid, 0.0, x)
    y = np.where(invalid, 0.0, y)

    win = _ssim_window()
    f = lambda arr: ndimage.correlate(arr, win, mode="reflect")
    ux = f(x)
    uy = f(y)
    vx = f(x * x) - ux * ux
    vy = f(y * y) - uy * uy
    vxy = f(x * y) - ux * uy

    c1 = (SSIM_K1 * rng) ** 2
    c2 = (SSIM_K2 * rng) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / \
        ((ux * ux + uy * uy + c1) * (vx + vy + c2))

    half = SSIM_WIN // 2
    window_ok = ~ndimage.maximum_filter(invalid, size=SSIM_WIN, mode="constant",
                                        cval=False)
    window_ok[:half, :] = False
    window_ok[-half:, :] = False
    window_ok[:, :half] = False
    window_ok[:, -half:] = False
    if not window_ok.any():
        raise InvariantError("all SSIM windows contain invalid pixels")
    return float(s[window_ok].mean())


class RegionDivergence(NamedTuple):
    kl: float
    js: float
    degenerate: bool


def region_divergence(gt: ImagePlane, pred: ImagePlane,
                      region: tuple[int, int, int, int],
                      bins: int = DEFAULT_BINS) -> RegionDivergence:
    """KL(gt || pred) and JS divergence of intensity histograms in a region.

    ``region`` is (row, col, height, width).  Histograms share the value
    range of the union of both regions; every bin gets +1e-12 before
    normalizing.  A constant union range is degenerate and reports zeros.
    Divergences are in nats.
    """
    if bins < 2:
        raise InvariantError("bins must be >= 2")
    r, c, h, w = region
    if r < 0 or c < 0 or h < 1 or w < 1 or r + h > gt.height or c + w > gt.width:
        raise InvariantError(f"region {region} not inside image")
    _check_same_dims(gt, pred)
    g = gt.data[r:r + h, c:c + w].astype(np.float64)
    p = pred.data[r:r + h, c:c + w].astype(np.float64)
    g = g[np.isfinite(g)]
    p = p[np.isfinite(p)]
    if g.size == 0 or p.size == 0:
        raise InvariantError("region has no valid pixels")
    lo = min(g.min(), p.min())
    hi = max(g.max(), p.max())
    if lo == hi:
        return RegionDivergence(kl=0.0, js=0.0, degenerate=True)
    hg, _ = np.histogram(g, bins=bins, range=(lo, hi))
    hp, _ = np.histogram(p, bins=bins, range=(lo, hi))
    pg = hg.astype(np.float64) + HIST_EPS
    pp = hp.astype(np.float64) + HIST_EPS
    pg /= pg.sum()
    pp /= pp.sum()
    kl = float(np.sum(pg * np.log(pg / pp)))
    mid = 0.5 * (pg + pp)
    js = float(0.5 * np.sum(pg * np.log(pg / mid))
               + 0.5 * np.sum(pp * np.log(pp / mid)))
    return RegionDivergence(kl=kl, js=js, degenerate=False)


@dataclass(frozen=True)
class MetricReport:
    """One evaluation record for a gt/pred pair."""

    fe: float
    psnr: float
    ssim: float
    n_sources: int
    data_range: float
    kl: float | None = None
    js: float | None = None

    def __post_init__(self):
        if self.kl is not None and self.kl < 0:
            raise InvariantError("kl must be >= 0")
        if self.js is not None and not (-1e-12 <= self.js <= math.log(2) + 1e-12):
            raise InvariantError("js must lie in [0, ln 2]")

    def to_dict(self) -> dict:
        d = {
            "fe": self.fe,
            "psnr": None if math.isinf(self.psnr) else self.psnr,
            "psnr_infinite": math.isinf(self.psnr),
            "ssim": self.ssim,
            "n_sources": self.n_sources,
            "data_range": self.data_range,
        }
        if self.kl is not None:
            d["kl"] = self.kl
            d["js"] = self.js
            d["divergence_log_base"] = "e"
        return d


def compute_report(gt: ImagePlane, pred: ImagePlane,
                   params: DetectionParams = DetectionParams(),
                   region: tuple[int, int, int, int] | None = None,
                   bins: int = DEFAULT_BINS) -> MetricReport:
    fe, n_sources = flux_error(gt, pred, params)
    kl = js = None
    if region is not None:
        div = region_divergence(gt, pred, region, bins)
        kl, js = div.kl, div.js
    return MetricReport(fe=fe, psnr=psnr(gt, pred), ssim=ssim(gt, pred),
                        n_sources=n_sources, data_range=data_range(gt),
                        kl=kl, js=js)
