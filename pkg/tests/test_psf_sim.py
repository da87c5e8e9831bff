import math

import numpy as np
import pytest
from scipy.special import j1

from skyflux.image_store import InvariantError
from skyflux.psf_sim import (J1_FIRST_ZERO, PsfSpec, airy_kernel, convolve,
                             gaussian_kernel, sample_psf)

from conftest import image_from


def test_gaussian_unit_sum_and_peak():
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=1.0, support=4))
    assert abs(k.sum() - 1.0) < 1e-12
    c = k.shape[0] // 2
    assert k[c, c] == k.max()


def test_gaussian_value_ratio():
    # normalization cancels in the ratio: k(1,0)/k(0,0) = exp(-1/2)
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=1.0, support=4))
    c = k.shape[0] // 2
    assert k[c, c + 1] / k[c, c] == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_gaussian_fwhm_dense_sampling_oracle():
    # measure FWHM from the kernel row by dense spline interpolation
    from scipy.interpolate import CubicSpline

    sigma = 1.2
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=sigma))
    c = k.shape[0] // 2
    row = k[c, :]
    half = row[c] / 2.0
    spline = CubicSpline(np.arange(row.size, dtype=np.float64), row)
    fine_x = np.linspace(0, row.size - 1, 200001)
    fine = spline(fine_x)
    above = fine >= half
    width = (fine_x[above][-1] - fine_x[above][0])
    expected = 2.0 * math.sqrt(2.0 * math.log(2.0)) * sigma
    assert abs(width - expected) / expected < 0.01


def test_kernel_symmetry_bit_level():
    for spec in (PsfSpec(kind="gaussian", sigma=1.1),
                 PsfSpec(kind="airy", r=2.0)):
        k = spec.kernel()
        assert np.array_equal(k, k[::-1, :])
        assert np.array_equal(k, k[:, ::-1])
        assert np.array_equal(k, k.T)


def test_airy_center_value_is_limit():
    spec = PsfSpec(kind="airy", r=2.0)
    k = airy_kernel(spec)
    c = k.shape[0] // 2
    # the unnormalized center value is exactly 1, so center/normalization = 1
    assert k[c, c] == pytest.approx(1.0 / (k.sum() / k[c, c] * k[c, c]) * k[c, c],
                                    rel=1e-12)
    assert k[c, c] == k.max()


def test_airy_first_zero_bisection_oracle():
    # locate the first J1 zero by bisection, then check the kernel vanishes
    # at rho = r for each dataset radius
    lo, hi = 3.0, 4.5
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if j1(lo) * j1(mid) <= 0:
            hi = mid
        else:
            lo = mid
    zero = 0.5 * (lo + hi)
    assert zero == pytest.approx(3.8317059702075123, abs=1e-10)

    for r in (1.9, 2.0, 2.2):
        k_scale = J1_FIRST_ZERO / r
        z = k_scale * r
        val = (2.0 * j1(z) / z) ** 2
        assert val < 1e-6
        # on-grid check where rho = r lands on a sample point
        kern = airy_kernel(PsfSpec(kind="airy", r=r))
        c = kern.shape[0] // 2
        ring = kern[c, c + int(round(r))] / kern[c, c] if float(r).is_integer() \
            else None
        if ring is not None:
            assert ring < 1e-6


def test_airy_encircled_energy_monotone_in_r():
    def half_energy_radius(r, oversample=16):
        # cumulative-sum oracle on an oversampled sampling of the profile
        spec = PsfSpec(kind="airy", r=r)
        n = spec.support * oversample
        step = 1.0 / oversample
        coords = np.arange(-n, n + 1) * step
        xx, yy = np.meshgrid(coords, coords)
        z = (J1_FIRST_ZERO / r) * np.hypot(xx, yy)
        vals = np.ones_like(z)
        nz = z != 0
        vals[nz] = (2.0 * j1(z[nz]) / z[nz]) ** 2
        vals /= vals.sum()
        rho = np.hypot(xx, yy).ravel()
        order = np.argsort(rho, kind="stable")
        cum = np.cumsum(vals.ravel()[order])
        return rho[order][np.searchsorted(cum, 0.5)]

    radii = [half_energy_radius(r) for r in (1.9, 2.0, 2.2)]
    assert radii[0] < radii[1] < radii[2]


def test_spec_validation():
    with pytest.raises(InvariantError):
        PsfSpec(kind="gaussian", sigma=0.0)
    with pytest.raises(InvariantError):
        PsfSpec(kind="airy", r=-1.0)
    with pytest.raises(InvariantError):
        PsfSpec(kind="gaussian", sigma=2.0, support=3)  # below 4 sigma
    with pytest.raises(InvariantError):
        PsfSpec(kind="nope")


def test_sample_psf_policies():
    rng = np.random.default_rng(0)
    for _ in range(50):
        g = sample_psf("gaussian", rng)
        assert g.kind == "gaussian" and 0.8 <= g.sigma <= 1.2
        a = sample_psf("airy", rng)
        assert a.kind == "airy" and 1.9 <= a.r <= 2.2
    kinds = {sample_psf("mixed", np.random.default_rng(s)).kind
             for s in range(20)}
    assert kinds == {"gaussian", "airy"}


def test_convolve_impulse_response():
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=1.0, support=4))
    data = np.zeros((32, 32), dtype=np.float32)
    data[16, 14] = 1.0
    out = convolve(image_from(data), k)
    window = out.data[12:21, 10:19].astype(np.float64)
    assert np.allclose(window, k, atol=1e-7)


def test_convolve_constant_image():
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=1.0))
    img = image_from(np.full((24, 24), 3.25, dtype=np.float32))
    out = convolve(img, k)
    assert np.allclose(out.data, 3.25, atol=1e-6)


def test_convolve_flux_conservation_summation_oracle():
    rng = np.random.default_rng(11)
    img = image_from(rng.uniform(0, 100, (128, 128)).astype(np.float32))
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=1.2))
    out = convolve(img, k)
    s_in = float(img.data.astype(np.float64).sum())
    s_out = float(out.data.astype(np.float64).sum())
    assert abs(s_out - s_in) / s_in < 1e-9


def test_convolve_nan_handling():
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=1.0))
    data = np.full((24, 24), 2.0, dtype=np.float32)
    data[10:12, 10:12] = np.nan
    out = convolve(image_from(data), k)
    # NaN exactly where input is NaN
    assert np.array_equal(np.isnan(out.data), np.isnan(data))
    # renormalization over the valid support keeps a constant image constant
    valid = ~np.isnan(data)
    assert np.allclose(out.data[valid], 2.0, atol=1e-6)


def test_convolve_peak_contraction():
    rng = np.random.default_rng(3)
    img = image_from(rng.uniform(0, 50, (32, 32)).astype(np.float32))
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=1.0))
    out = convolve(img, k)
    assert out.data.max() <= img.data.max() + 1e-6


def test_convolve_errors():
    k = gaussian_kernel(PsfSpec(kind="gaussian", sigma=1.0))
    small = image_from(np.ones((4, 4)))
    with pytest.raises(InvariantError, match="larger than image"):
        convolve(small, k)
    img = image_from(np.ones((32, 32)))
    with pytest.raises(InvariantError, match="odd"):
        convolve(img, np.ones((4, 4)) / 16)
    with pytest.raises(InvariantError, match="normalized"):
        convolve(img, np.ones((3, 3)))
