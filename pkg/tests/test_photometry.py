import math
from dataclasses import replace

import numpy as np
import pytest

from skyflux.image_store import SourceRecord
from skyflux.photometry import (Background, DetectionParams, PhotometryError,
                                aperture_stats, detect_sources,
                                estimate_background, measure_flux,
                                photometer_with_catalog)

from conftest import image_from, render_gaussian


def test_background_constant_image():
    img = image_from(np.full((64, 64), 4.25))
    bg = estimate_background(img)
    assert bg.level == 4.25
    assert bg.noise_sigma == 0.0


def test_background_gaussian_noise_monte_carlo():
    rng = np.random.default_rng(7)
    img = image_from(rng.normal(0, 1, (256, 256)))
    bg = estimate_background(img)
    assert -0.02 <= bg.level <= 0.02
    # 3-sigma clipping biases the estimated sigma a few percent low
    assert 0.93 <= bg.noise_sigma <= 1.0


def test_background_rejects_outliers():
    rng = np.random.default_rng(8)
    base = rng.normal(10.0, 1.0, (256, 256))
    spiked = base.copy()
    spiked[rng.random((256, 256)) < 0.01] += 100.0
    level_clean = estimate_background(image_from(base)).level
    level_spiked = estimate_background(image_from(spiked)).level
    assert abs(level_spiked - level_clean) / abs(level_clean) < 0.02


def test_background_needs_valid_pixels():
    img = image_from(np.full((8, 8), np.nan))
    with pytest.raises(PhotometryError):
        estimate_background(img)


def test_detect_single_circular_source():
    # noiseless injection: exactly one detection with faithful parameters
    sigma, flux = 2.0, 50000.0
    x0, y0 = 63.3, 64.7
    img = image_from(render_gaussian((128, 128), x0, y0, flux, sigma))
    dets = detect_sources(img)
    assert len(dets) == 1
    d = dets[0]
    assert abs(d.x - x0) < 0.1
    assert abs(d.y - y0) < 0.1
    assert 0.9 <= d.a / d.b <= 1.1
    assert abs(d.a - sigma) / sigma < 0.15


def test_detect_elongated_source():
    sa, sb = 3.0, 1.5
    theta = math.radians(30.0)
    img = image_from(render_gaussian((128, 128), 64.0, 64.0, 60000.0,
                                     sa, sb, theta))
    d = detect_sources(img)[0]
    assert abs(math.degrees(d.theta) - 30.0) <= 5.0
    assert 1.7 <= d.a / d.b <= 2.3


def test_detect_rotation_by_90_degrees_swaps_theta():
    sa, sb = 3.0, 1.5
    theta = math.radians(25.0)
    base = render_gaussian((96, 96), 48.0, 48.0, 60000.0, sa, sb, theta)
    rot = render_gaussian((96, 96), 48.0, 48.0, 60000.0, sa, sb,
                          theta + math.pi / 2)
    d0 = detect_sources(image_from(base))[0]
    d1 = detect_sources(image_from(rot))[0]
    dt = (d1.theta - d0.theta) % math.pi
    assert min(dt, math.pi - dt) == pytest.approx(math.pi / 2, abs=0.1)
    assert d1.a == pytest.approx(d0.a, rel=0.05)
    assert d1.b == pytest.approx(d0.b, rel=0.05)


def test_detect_spurious_rate_on_blank_noise():
    # Monte-Carlo false-positive oracle at the default 1.5 sigma threshold.
    # A 1.5 sigma cut keeps ~6.7% of noise pixels, so ~25 spurious
    # >=5-pixel clumps per 256^2 field is the true operating point of these
    # defaults; the frozen band guards against drift in either direction.
    counts = []
    for s in range(20):
        rng = np.random.default_rng(1000 + s)
        img = image_from(rng.normal(0, 1, (256, 256)))
        counts.append(len(detect_sources(img)))
    mean = float(np.mean(counts))
    assert 18.0 <= mean <= 38.0


def test_detect_threshold_monotonicity():
    rng = np.random.default_rng(55)
    data = rng.normal(0, 1, (128, 128))
    data += render_gaussian((128, 128), 40.0, 50.0, 20000.0, 2.0)
    data += render_gaussian((128, 128), 90.0, 30.0, 3000.0, 1.5)
    img = image_from(data)
    counts = [len(detect_sources(img, DetectionParams(thresh_sigma=t)))
              for t in (1.0, 1.5, 2.5, 4.0, 8.0)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_detect_empty_image_ok():
    img = image_from(np.zeros((32, 32)))
    assert detect_sources(img) == []


def test_detect_orders_by_peak():
    data = render_gaussian((128, 128), 30.0, 30.0, 10000.0, 1.5) \
        + render_gaussian((128, 128), 90.0, 90.0, 60000.0, 1.5)
    dets = detect_sources(image_from(data))
    assert len(dets) == 2
    assert dets[0].x == pytest.approx(90.0, abs=0.2)
    assert dets[0].id == 1


def test_measure_flux_recovers_injected_gaussian():
    # analytic oracle: >99.99% of a Gaussian's mass lies inside 6 sigma
    flux = 1000.0
    img = image_from(render_gaussian((128, 128), 64.0, 64.0, flux, 2.0))
    d = detect_sources(img)[0]
    got = measure_flux(img, d, background=Background(0.0, 0.0))
    assert 0.99 * flux <= got <= 1.01 * flux


def test_measure_flux_zero_image():
    img = image_from(np.zeros((64, 64)))
    src = SourceRecord(id=1, x=32.0, y=32.0, a=2.0, b=2.0, theta=0.0)
    assert measure_flux(img, src, background=Background(0.0, 0.0)) == 0.0


def test_measure_flux_two_distant_sources_independent():
    # superposition oracle: sources 20a apart measure independently
    a = 2.0
    f1, f2 = 1000.0, 5000.0
    sep = 20 * a * 6 / 6  # 20 semi-major axes
    img1 = render_gaussian((256, 256), 60.0, 128.0, f1, a)
    img2 = render_gaussian((256, 256), 60.0 + 20 * a, 128.0, f2, a)
    both = image_from(img1 + img2)
    dets = detect_sources(both)
    assert len(dets) == 2
    zero = Background(0.0, 0.0)
    fluxes = sorted(photometer_with_catalog(both, dets, background=zero))
    assert fluxes[0] == pytest.approx(f1, rel=0.01)
    assert fluxes[1] == pytest.approx(f2, rel=0.01)


def test_measure_flux_nan_pixels_contribute_zero():
    flux = 1000.0
    data = render_gaussian((64, 64), 32.0, 32.0, flux, 2.0)
    data[32, 32] = np.nan
    img = image_from(data)
    src = SourceRecord(id=1, x=32.0, y=32.0, a=2.0, b=2.0, theta=0.0)
    got, npix, bad = aperture_stats(img, src, background=Background(0.0, 0.0))
    assert 0 < bad < 0.01
    peak = flux / (2 * math.pi * 4.0)
    assert got == pytest.approx(flux - peak, rel=0.02)


def test_aperture_outside_image():
    img = image_from(np.zeros((32, 32)))
    src = SourceRecord(id=1, x=31.0, y=31.0, a=1.0, b=1.0, theta=0.0)
    with pytest.raises(PhotometryError):
        # positions are validated against the frame in catalog photometry
        photometer_with_catalog(img, [replace(src, x=500.0)],
                                background=Background(0.0, 0.0))


def test_photometer_identity_and_linearity():
    data = render_gaussian((96, 96), 48.0, 48.0, 2000.0, 2.0)
    img = image_from(data)
    cat = detect_sources(img)
    v1 = photometer_with_catalog(img, cat)
    v2 = photometer_with_catalog(img, cat)
    assert v1 == v2  # bit-for-bit: same pixels, same apertures
    doubled = image_from(2.0 * data)
    v3 = photometer_with_catalog(doubled, cat)
    assert v3[0] == pytest.approx(2.0 * v1[0], rel=1e-12)


def test_photometer_offset_matches_counting_oracle():
    data = render_gaussian((96, 96), 48.0, 48.0, 2000.0, 2.0)
    img = image_from(data)
    cat = detect_sources(img)
    offset = 0.5
    shifted = image_from(data + offset)
    v0 = photometer_with_catalog(img, cat)
    v1 = photometer_with_catalog(shifted, cat)
    # independent pixel-count oracle for the aperture
    src = cat[0]
    k = DetectionParams().aperture_k
    yy, xx = np.mgrid[0:96, 0:96]
    ct, st = math.cos(src.theta), math.sin(src.theta)
    xr = (xx - src.x) * ct + (yy - src.y) * st
    yr = -(xx - src.x) * st + (yy - src.y) * ct
    n_inside = int(np.sum((xr / (k * src.a)) ** 2 + (yr / (k * src.b)) ** 2 <= 1))
    assert v1[0] - v0[0] == pytest.approx(offset * n_inside, rel=1e-5)


def test_aperture_linearity_with_zero_background():
    a = render_gaussian((96, 96), 48.0, 48.0, 1000.0, 2.0)
    b = render_gaussian((96, 96), 48.0, 48.0, 700.0, 3.0)
    cat = detect_sources(image_from(a))
    zero = Background(0.0, 0.0)
    alpha, beta = 1.5, 2.25
    lhs = photometer_with_catalog(image_from(alpha * a + beta * b), cat,
                                  background=zero)[0]
    fa = photometer_with_catalog(image_from(a), cat, background=zero)[0]
    fb = photometer_with_catalog(image_from(b), cat, background=zero)[0]
    assert lhs == pytest.approx(alpha * fa + beta * fb, rel=1e-5)


def test_detection_params_validation():
    with pytest.raises(Exception):
        DetectionParams(thresh_sigma=0.0)
    with pytest.raises(Exception):
        DetectionParams(min_area=0)
    with pytest.raises(Exception):
        DetectionParams(aperture_k=-1)
