import math

import numpy as np
import pytest

from skyflux import ImagePlane, WcsModel


def make_wcs(scale_arcsec=0.05, crval=(30.0, 10.0), crpix=(1.0, 1.0),
             rot_deg=0.0, flip=True) -> WcsModel:
    """TAN calibration at a given pixel scale; flip mirrors the RA axis the
    way drizzled frames usually do."""
    p = scale_arcsec / 3600.0
    c, s = math.cos(math.radians(rot_deg)), math.sin(math.radians(rot_deg))
    sx = -p if flip else p
    cd = ((sx * c, -p * s), (sx * s, p * c))
    return WcsModel(crpix=crpix, crval=crval, cd=cd)


def image_from(arr, wcs=None) -> ImagePlane:
    if wcs is None:
        wcs = make_wcs(scale_arcsec=1.0)
    return ImagePlane.from_array(np.asarray(arr, dtype=np.float32), wcs)


def render_gaussian(shape, x0, y0, flux, sa, sb=None, theta=0.0):
    """Analytic elliptical Gaussian raster, float64."""
    if sb is None:
        sb = sa
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    ct, st = math.cos(theta), math.sin(theta)
    dx = xx - x0
    dy = yy - y0
    xr = dx * ct + dy * st
    yr = -dx * st + dy * ct
    return flux / (2 * math.pi * sa * sb) * np.exp(
        -0.5 * ((xr / sa) ** 2 + (yr / sb) ** 2))


@pytest.fixture
def wcs_1as():
    return make_wcs(scale_arcsec=1.0)


@pytest.fixture
def wcs_hst():
    return make_wcs(scale_arcsec=0.05, crpix=(64.5, 64.5))
