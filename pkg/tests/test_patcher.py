import math

import numpy as np
import pytest

from skyflux.flux_resample import ResampleSpec, downsample_flux
from skyflux.image_store import ImagePlane, InvariantError
from skyflux.patcher import PatchSpec, crop_image, subdivide
from skyflux.psf_sim import PsfSpec, convolve
from skyflux.synth_field import SynthSpec, generate
from skyflux.wcs_geom import pixel_to_sky

from conftest import make_wcs


def make_pair(width=512, height=512, seed=5, s=2, n_sources=40):
    spec = SynthSpec(width=width, height=height, n_sources=n_sources, seed=seed)
    hr, _ = generate(spec)
    blur = convolve(hr, PsfSpec(kind="gaussian", sigma=1.0).kernel())
    lr = downsample_flux(blur, ResampleSpec.for_image(blur.wcs, s))
    return blur, lr


def test_full_tiling_count():
    hr, lr = make_pair()
    pairs, rejections = subdivide(hr, lr, 2, PatchSpec(hr_patch=256, stride=256))
    assert len(pairs) == 4
    assert rejections == {"low_valid_fraction": 0, "no_sources": 0}
    origins = sorted(m.patch_origin for _, _, m in pairs)
    assert origins == [(0, 0), (0, 256), (256, 0), (256, 256)]


def test_patch_with_quarter_nan_rejected():
    hr, lr = make_pair(width=256, height=256, n_sources=30)
    data = hr.data.copy()
    data[0:128, 0:128] = np.nan  # 25% of the single 256 patch
    holed = ImagePlane.from_array(data, hr.wcs)
    lr2 = downsample_flux(holed, ResampleSpec.for_image(holed.wcs, 2))
    pairs, rejections = subdivide(holed, lr2, 2,
                                  PatchSpec(hr_patch=256, stride=256))
    assert pairs == []
    assert rejections["low_valid_fraction"] == 1


def test_sourceless_patch_rejected():
    # a featureless constant patch yields zero detections and is dropped
    wcs = make_wcs(scale_arcsec=0.05, crpix=(64.5, 64.5))
    flat = ImagePlane.from_array(np.full((128, 128), 3.0, np.float32), wcs)
    lr = downsample_flux(flat, ResampleSpec.for_image(wcs, 2))
    pairs, rejections = subdivide(flat, lr, 2, PatchSpec(hr_patch=128,
                                                         stride=128))
    assert pairs == []
    assert rejections["no_sources"] == 1


def test_min_sources_zero_keeps_empty_patch():
    wcs = make_wcs(scale_arcsec=0.05, crpix=(64.5, 64.5))
    flat = ImagePlane.from_array(np.full((128, 128), 3.0, np.float32), wcs)
    lr = downsample_flux(flat, ResampleSpec.for_image(wcs, 2))
    pairs, _ = subdivide(flat, lr, 2,
                         PatchSpec(hr_patch=128, stride=128, min_sources=0))
    assert len(pairs) == 1


def test_patch_pairing_and_wcs():
    hr, lr = make_pair(width=256, height=256, n_sources=30)
    pairs, _ = subdivide(hr, lr, 2, PatchSpec(hr_patch=128, stride=128))
    for hr_patch, lr_patch, manifest in pairs:
        r, c = manifest.patch_origin
        assert np.array_equal(hr_patch.data, hr.data[r:r + 128, c:c + 128],
                              equal_nan=True)
        assert np.array_equal(
            lr_patch.data,
            lr.data[r // 2:r // 2 + 64, c // 2:c // 2 + 64], equal_nan=True)
        # crop WCS points at the same sky as the parent
        ra_p, dec_p = pixel_to_sky(hr_patch.wcs, 1.0, 1.0)
        ra_o, dec_o = pixel_to_sky(hr.wcs, c + 1.0, r + 1.0)
        assert ra_p == pytest.approx(ra_o, abs=1e-12)
        assert dec_p == pytest.approx(dec_o, abs=1e-12)


def test_alignment_invariant():
    # re-downsampling the HR crop reproduces the LR crop away from the ring
    hr, lr = make_pair()
    pairs, _ = subdivide(hr, lr, 2, PatchSpec(hr_patch=256, stride=256))
    ring = math.ceil(4 / 2) + 1  # kernel support 4 at sigma 1.0, s = 2
    for hr_patch, lr_patch, _ in pairs:
        redo = downsample_flux(hr_patch, ResampleSpec.for_image(hr_patch.wcs, 2))
        a = redo.data[ring:-ring, ring:-ring].astype(np.float64)
        b = lr_patch.data[ring:-ring, ring:-ring].astype(np.float64)
        rel = np.abs(a - b) / np.maximum(np.abs(b), 1e-9)
        assert rel.max() < 1e-6


def test_determinism():
    hr, lr = make_pair(width=256, height=256, n_sources=20)
    spec = PatchSpec(hr_patch=128, stride=64)
    first, _ = subdivide(hr, lr, 2, spec)
    second, _ = subdivide(hr, lr, 2, spec)
    assert [m for _, _, m in first] == [m for _, _, m in second]
    for (h1, l1, _), (h2, l2, _) in zip(first, second):
        assert h1.data.tobytes() == h2.data.tobytes()
        assert l1.data.tobytes() == l2.data.tobytes()


def test_validation_errors():
    hr, lr = make_pair(width=256, height=256, n_sources=10)
    with pytest.raises(InvariantError, match="divisible"):
        subdivide(hr, lr, 2, PatchSpec(hr_patch=129, stride=128))
    with pytest.raises(InvariantError, match="larger than image"):
        subdivide(hr, lr, 2, PatchSpec(hr_patch=512, stride=512))
    bad_lr = ImagePlane.from_array(lr.data[:64, :64], lr.wcs)
    with pytest.raises(InvariantError, match="not hr dims"):
        subdivide(hr, bad_lr, 2, PatchSpec(hr_patch=128, stride=128))


def test_crop_image_bounds():
    hr, _ = make_pair(width=256, height=256, n_sources=5)
    with pytest.raises(InvariantError):
        crop_image(hr, 200, 200, 128, 128)
