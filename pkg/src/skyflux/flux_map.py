"""
Flux maps and the flux-weighted consistency loss.

A flux map stamps one rotated Gaussian kernel per cataloged source, with the
kernel sigmas set from the ellipse axes and the kernel scaled by the source
flux directly, then sums the stamps.  The consistency loss weights the
absolute prediction residual by this map, concentrating supervision on
flux-carrying regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .image_store import ImagePlane, InvariantError, SourceRecord

# Per-source kernels are truncated at this many sigmas (elliptical contour);
# the discarded mass is below e^-8 of the kernel.
KERNEL_TRUNC_SIGMA = 4.0

DEFAULT_LAMBDA = 0.01


@dataclass(frozen=True)
class FluxMap:
    """Flux-weighted kernel sum over an image grid."""

    data: np.ndarray  # float64, shape (height, width)
    normalized: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvariantError("flux map must be 2D")
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)


def build_flux_map(dims: tuple[int, int], catalog: Sequence[SourceRecord],
                   c_sigma: float = 1.0) -> FluxMap:
    """Stamp a flux-scaled rotated Gaussian per source onto a (height, width) grid.

    Kernel sigmas are c_sigma * (a, b) of each source; the source flux
    multiplies the kernel directly.  Kernels truncate at the 4-sigma ellipse
    and disjoint sources superpose exactly.
    """
    height, width = dims
    out = np.zeros((height, width), dtype=np.float64)
    for src in catalog:
        if not math.isfinite(src.flux):
            raise InvariantError(f"source {src.id} has non-finite flux")
        sa = c_sigma * src.a
        sb = c_sigma * src.b
        rmax = KERNEL_TRUNC_SIGMA * sa
        x0 = max(int(math.floor(src.x - rmax)), 0)
        x1 = min(int(math.ceil(src.x + rmax)) + 1, width)
        y0 = max(int(math.floor(src.y - rmax)), 0)
        y1 = min(int(math.ceil(src.y + rmax)) + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        dx = xs - src.x
        dy = ys - src.y
        ct = math.cos(src.theta)
        st = math.sin(src.theta)
        xr = dx * ct + dy * st
        yr = -dx * st + dy * ct
        r2 = (xr / sa) ** 2 + (yr / sb) ** 2
        stamp = src.flux * np.exp(-0.5 * r2)
        stamp[r2 > KERNEL_TRUNC_SIGMA ** 2] = 0.0
        out[y0:y1, x0:x1] += stamp
    return FluxMap(data=out, normalized=False)


def normalize_map(m: FluxMap) -> FluxMap:
    """Scale the map so its maximum is 1; idempotent."""
    peak = float(m.data.max(initial=0.0))
    if peak <= 0.0:
        raise InvariantError("cannot normalize an all-zero flux map")
    if peak == 1.0 and m.normalized:
        return m
    return FluxMap(data=m.data / peak, normalized=True)


class LossReport(NamedTuple):
    flux: float
    recon: float
    total: float
    lam: float


def flux_consistency_loss(pred: ImagePlane, gt: ImagePlane, m: FluxMap) -> float:
    """Map-weighted absolute residual, summed over valid pixels."""
    return combined_loss(pred, gt, m, lam=DEFAULT_LAMBDA).flux


def combined_loss(pred: ImagePlane, gt: ImagePlane, m: FluxMap,
                  lam: float = DEFAULT_LAMBDA) -> LossReport:
    """Flux-weighted loss plus the mean-absolute reconstruction term.

    total = recon + lam * flux, evaluated over pixels valid in both images;
    NaN positions must agree between pred and gt.
    """
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InvariantError("pred/gt dims differ")
    if m.data.shape != (gt.height, gt.width):
        raise InvariantError("flux map dims differ from images")
    pv = np.isfinite(pred.data)
    gv = np.isfinite(gt.data)
    if not np.array_equal(pv, gv):
        raise InvariantError("pred/gt NaN positions differ")
    resid = np.abs(pred.data.astype(np.float64) - gt.data.astype(np.float64))
    resid = np.where(gv, resid, 0.0)
    flux_term = float((m.data * resid).sum())
    n_valid = int(gv.sum())
    if n_valid == 0:
        raise InvariantError("no valid pixels shared by pred and gt")
    recon = float(resid.sum() / n_valid)
    return LossReport(flux=flux_term, recon=recon,
                      total=recon + lam * flux_term, lam=float(lam))
