"""
Point-spread-function kernels (Gaussian and Airy) and NaN-aware convolution.

Kernels are sampled on odd-sized grids, normalized to unit sum, and applied
by direct spatial convolution in float64 with reflective boundary padding,
which preserves total image flux for unit-sum kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import j1

from .image_store import ImagePlane, InvariantError

# First zero of the Bessel function J1; the Airy first dark ring sits at
# k * rho = this value.
J1_FIRST_ZERO = 3.8317059702075123

# Fourth zero of J1; kernels extend out to the third bright ring.
J1_FOURTH_ZERO = 13.323691936314223

GAUSSIAN_SIGMA_RANGE = (0.8, 1.2)
AIRY_RADIUS_RANGE = (1.9, 2.2)


@dataclass(frozen=True)
class PsfSpec:
    """Kernel family plus parameters.

    kind    : "gaussian" or "airy".
    sigma   : Gaussian standard deviation in pixels (gaussian only).
    r       : radius of the first dark ring in pixels (airy only).
    support : kernel half-width in pixels; derived from the parameters when
              not given (>= 4 sigma for Gaussian, three bright rings for Airy).
    """

    kind: str
    sigma: float | None = None
    r: float | None = None
    support: int | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in ("gaussian", "airy"):
            raise InvariantError(f"unknown PSF kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "gaussian":
            if self.sigma is None or self.sigma <= 0:
                raise InvariantError("gaussian PSF requires sigma > 0")
            object.__setattr__(self, "sigma", float(self.sigma))
        else:
            if self.r is None or self.r <= 0:
                raise InvariantError("airy PSF requires r > 0")
            object.__setattr__(self, "r", float(self.r))
        support = self.support
        if support is None:
            if kind == "gaussian":
                support = math.ceil(4.0 * self.sigma)
            else:
                support = math.ceil(self.r * J1_FOURTH_ZERO / J1_FIRST_ZERO)
        support = int(support)
        min_support = (math.ceil(4.0 * self.sigma) if kind == "gaussian"
                       else math.ceil(self.r * J1_FOURTH_ZERO / J1_FIRST_ZERO))
        if support < min_support:
            raise InvariantError(
                f"support {support} too small for {kind} PSF (needs >= {min_support})")
        object.__setattr__(self, "support", support)

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "sigma": self.sigma}
        return {"kind": "airy", "r": self.r}

    @classmethod
    def from_dict(cls, d: dict) -> "PsfSpec":
        if d["kind"] == "gaussian":
            return cls(kind="gaussian", sigma=d["sigma"])
        return cls(kind="airy", r=d["r"])

    def kernel(self) -> np.ndarray:
        return gaussian_kernel(self) if self.kind == "gaussian" else airy_kernel(self)


def _radius_grids(support: int):
    coords = np.arange(-support, support + 1, dtype=np.float64)
    return np.meshgrid(coords, coords)


def gaussian_kernel(spec: PsfSpec) -> np.ndarray:
    """Unit-sum Gaussian kernel exp(-(x^2 + y^2) / (2 sigma^2)) on an odd grid."""
    if spec.kind != "gaussian":
        raise InvariantError("gaussian_kernel requires a gaussian PsfSpec")
    xx, yy = _radius_grids(spec.support)
    kernel = np.exp(-(xx * xx + yy * yy) / (2.0 * spec.sigma * spec.sigma))
    return kernel / kernel.sum()


def airy_kernel(spec: PsfSpec) -> np.ndarray:
    """Unit-sum Airy kernel [2 J1(k rho) / (k rho)]^2 with the first dark ring
    at radius ``r`` pixels (k = 3.8317.../r); the central value before
    normalization is 1 by the limit J1(z)/z -> 1/2."""
    if spec.kind != "airy":
        raise InvariantError("airy_kernel requires an airy PsfSpec")
    k = J1_FIRST_ZERO / spec.r
    xx, yy = _radius_grids(spec.support)
    z = k * np.hypot(xx, yy)
    kernel = np.ones_like(z)
    nz = z != 0.0
    kernel[nz] = (2.0 * j1(z[nz]) / z[nz]) ** 2
    return kernel / kernel.sum()


def sample_psf(policy: str, rng: np.random.Generator,
               sigma_range: tuple[float, float] = GAUSSIAN_SIGMA_RANGE,
               r_range: tuple[float, float] = AIRY_RADIUS_RANGE) -> PsfSpec:
    """Draw a PsfSpec under a blur policy.

    "gaussian" and "airy" draw their parameter uniformly from the given
    range; "mixed" first picks either family with equal probability.
    """
    if policy == "mixed":
        policy = "gaussian" if rng.random() < 0.5 else "airy"
    if policy == "gaussian":
        return PsfSpec(kind="gaussian", sigma=float(rng.uniform(*sigma_range)))
    if policy == "airy":
        return PsfSpec(kind="airy", r=float(rng.uniform(*r_range)))
    raise InvariantError(f"unknown PSF policy {policy!r}")


def convolve(img: ImagePlane, kernel: np.ndarray) -> ImagePlane:
    """Direct spatial convolution with reflective padding, NaN aware.

    NaN pixels are excluded from every window with weight renormalization
    over the valid support; output pixels are NaN exactly where the input is
    NaN.  For fully valid images a unit-sum kernel preserves total flux up to
    float64 rounding.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise InvariantError("kernel must be 2D with odd dimensions")
    if kernel.shape[0] > img.height or kernel.shape[1] > img.width:
        raise InvariantError("kernel larger than image")
    if abs(kernel.sum() - 1.0) > 1e-9:
        raise InvariantError("kernel must be normalized to unit sum")

    data = img.data.astype(np.float64)
    mask = np.isfinite(data)
    if mask.all():
        out = ndimage.convolve(data, kernel, mode="reflect")
    else:
        filled = np.where(mask, data, 0.0)
        num = ndimage.convolve(filled, kernel, mode="reflect")
        den = ndimage.convolve(mask.astype(np.float64), kernel, mode="reflect")
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(den > 0.0, num / den, np.nan)
        out[~mask] = np.nan
    return ImagePlane.from_array(out.astype(np.float32), img.wcs)
