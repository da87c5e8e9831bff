"""Flux-conserving astronomical imaging pipeline and evaluation toolkit."""

from .image_store import (ImagePlane, PairManifest, SourceRecord, WcsModel,
                          read_catalog, read_image, read_manifest,
                          write_catalog, write_image, write_manifest)
from .psf_sim import PsfSpec, airy_kernel, convolve, gaussian_kernel, sample_psf
from .wcs_geom import (OverlapEntry, ResamplePlan, SkyQuad, footprint_overlaps,
                       pixel_footprint, pixel_to_sky, sky_to_pixel,
                       spherical_quad_area)
from .flux_resample import (ResampleMethod, ResampleSpec, derive_lr_wcs,
                            downsample_bilinear, downsample_flux)
from .patcher import PatchSpec, subdivide
from .photometry import (Background, DetectionParams, detect_sources,
                         estimate_background, measure_flux,
                         photometer_with_catalog)
from .flux_map import FluxMap, build_flux_map, combined_loss, \
    flux_consistency_loss, normalize_map
from .metrics import (MetricReport, flux_error, psnr, region_divergence, ssim)
from .synth_field import SynthSpec, generate, inject_nan_regions

__version__ = "0.1.0"
