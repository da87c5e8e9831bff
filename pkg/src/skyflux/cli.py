"""
Command-line pipeline: dataset generation stages and evaluation.

Subcommands: synth, blur, downsample, subdivide, detect, photometry, fluxmap,
fcl, fe, metrics, pipeline, eval, compare-downsample.  Commands emit JSON to
stdout (or files under --out); pipeline exit codes are 0 on success, 2 when
some tiles failed, 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import flux_map as fm
from . import image_store as store
from . import metrics as met
from . import photometry as phot
from .flux_resample import (ResampleMethod, ResampleSpec,
                            conservation_residual, downsample_bilinear,
                            downsample_flux, downsample_flux_detailed)
from .patcher import PatchSpec, subdivide
from .psf_sim import PsfSpec, convolve, sample_psf
from .synth_field import SynthSpec, generate, inject_nan_regions


def _emit(obj, out: str | None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _detection_params(args) -> phot.DetectionParams:
    return phot.DetectionParams(
        thresh_sigma=args.thresh_sigma, min_area=args.min_area,
        aperture_k=args.aperture_k, clip_iters=args.clip_iters)


def _add_detection_flags(p: argparse.ArgumentParser):
    p.add_argument("--thresh-sigma", type=float, default=1.5, dest="thresh_sigma")
    p.add_argument("--min-area", type=int, default=5, dest="min_area")
    p.add_argument("--aperture-k", type=float, default=6.0, dest="aperture_k")
    p.add_argument("--clip-iters", type=int, default=5, dest="clip_iters")


# ---------------------------------------------------------------------------
# Stage commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SynthSpec(width=args.width, height=args.height,
                     n_sources=args.n_sources,
                     flux_range=tuple(args.flux_range),
                     sigma_range=tuple(args.sigma_range),
                     axis_ratio_range=tuple(args.axis_ratio_range),
                     background=tuple(args.background),
                     pixel_scale=args.pixel_scale, seed=args.seed)
    img, catalog = generate(spec)
    if args.nan_fraction > 0:
        img = inject_nan_regions(img, args.nan_fraction, args.seed + 1)
    store.write_image(img, args.out)
    if args.catalog:
        store.write_catalog(catalog, args.catalog)
    _emit({"out": args.out, "n_sources": len(catalog),
           "sum_flux": img.sum_flux()}, None)
    return 0


def cmd_blur(args) -> int:
    img = store.read_image(args.input)
    if args.sigma is not None:
        spec = PsfSpec(kind="gaussian", sigma=args.sigma)
    elif args.radius is not None:
        spec = PsfSpec(kind="airy", r=args.radius)
    else:
        spec = sample_psf(args.psf, np.random.default_rng(args.seed))
    out = convolve(img, spec.kernel())
    store.write_image(out, args.out)
    _emit({"out": args.out, "psf": spec.to_dict(),
           "sum_in": img.sum_flux(), "sum_out": out.sum_flux()}, None)
    return 0


def cmd_downsample(args) -> int:
    img = store.read_image(args.input)
    if args.method == "bilinear":
        out = downsample_bilinear(img, args.scale)
        deficit = None
    else:
        spec = ResampleSpec.for_image(img.wcs, args.scale)
        out, deficit_arr = downsample_flux_detailed(img, spec)
        deficit = float(deficit_arr.max())
        if args.deficit_out:
            np.save(args.deficit_out, deficit_arr)
    store.write_image(out, args.out)
    _emit({"out": args.out, "method": args.method, "scale": args.scale,
           "sum_in": img.sum_flux(), "sum_out": out.sum_flux(),
           "max_weight_deficit": deficit}, None)
    return 0


def cmd_subdivide(args) -> int:
    hr = store.read_image(args.hr)
    lr = store.read_image(args.lr)
    spec = PatchSpec(hr_patch=args.patch, stride=args.stride,
                     min_valid=args.min_valid, min_sources=args.min_sources)
    pairs, rejections = subdivide(hr, lr, args.scale, spec,
                                  detection=_detection_params(args),
                                  tile=args.tile)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = []
    for hr_patch, lr_patch, manifest in pairs:
        store.write_image(hr_patch, out_dir / manifest.hr_path)
        store.write_image(lr_patch, out_dir / manifest.lr_path)
        manifests.append(manifest)
    store.write_manifest(manifests, out_dir / f"{args.tile}_manifest.json")
    _emit({"retained": len(pairs), "rejections": rejections,
           "out_dir": str(out_dir)}, None)
    return 0


def cmd_detect(args) -> int:
    img = store.read_image(args.input)
    params = _detection_params(args)
    catalog = detect_and_measure(img, params)
    store.write_catalog(catalog, args.out)
    _emit({"n_sources": len(catalog), "out": args.out}, None)
    return 0


def detect_and_measure(img, params) -> list[store.SourceRecord]:
    catalog = phot.detect_sources(img, params)
    return phot.measure_catalog(img, catalog, params)


def cmd_photometry(args) -> int:
    img = store.read_image(args.input)
    catalog = store.read_catalog(args.catalog)
    params = _detection_params(args)
    fluxes = phot.photometer_with_catalog(img, catalog, params)
    from dataclasses import replace

    measured = [replace(s, flux=f) for s, f in zip(catalog, fluxes)]
    store.write_catalog(measured, args.out)
    _emit({"n_sources": len(measured), "out": args.out}, None)
    return 0


def cmd_fluxmap(args) -> int:
    catalog = store.read_catalog(args.catalog)
    if args.like:
        ref = store.read_image(args.like)
        dims = (ref.height, ref.width)
        wcs = ref.wcs
    else:
        dims = (args.height, args.width)
        wcs = store.WcsModel(crpix=(1.0, 1.0), crval=(0.0, 0.0),
                             cd=((1.0, 0.0), (0.0, 1.0)))
    m = fm.build_flux_map(dims, catalog, c_sigma=args.c_sigma)
    if args.normalize_map:
        m = fm.normalize_map(m)
    img = store.ImagePlane.from_array(m.data.astype(np.float32), wcs)
    store.write_image(img, args.out)
    _emit({"out": args.out, "normalized": m.normalized,
           "max": float(m.data.max(initial=0.0))}, None)
    return 0


def cmd_fcl(args) -> int:
    pred = store.read_image(args.pred)
    gt = store.read_image(args.gt)
    map_img = store.read_image(args.map)
    m = fm.FluxMap(data=map_img.data.astype(np.float64))
    report = fm.combined_loss(pred, gt, m, lam=args.lam)
    _emit({"flux_loss": report.flux, "recon_loss": report.recon,
           "total_loss": report.total, "lambda": report.lam}, args.out)
    return 0


def cmd_fe(args) -> int:
    gt = store.read_image(args.gt)
    pred = store.read_image(args.pred)
    params = _detection_params(args)
    catalog = phot.detect_sources(gt, params)
    if not catalog:
        raise met.NoSourcesError("no sources detected in the ground-truth image")
    bg = phot.estimate_background(gt, params)
    v_gt = phot.photometer_with_catalog(gt, catalog, params, bg)
    v_pred = phot.photometer_with_catalog(pred, catalog, params, bg)
    if args.residuals:
        import csv

        with open(args.residuals, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "flux_gt", "flux_pred", "abs_residual"])
            for s, g, p in zip(catalog, v_gt, v_pred):
                w.writerow([s.id, repr(g), repr(p), repr(abs(g - p))])
    fe = float(np.mean(np.abs(np.array(v_gt) - np.array(v_pred))))
    _emit({"fe": fe, "n_sources": len(catalog)}, args.out)
    return 0


def cmd_metrics(args) -> int:
    gt = store.read_image(args.gt)
    pred = store.read_image(args.pred)
    region = tuple(args.region) if args.region else None
    report = met.compute_report(gt, pred, _detection_params(args),
                                region=region, bins=args.bins)
    _emit(report.to_dict(), args.out)
    return 0


def cmd_compare_downsample(args) -> int:
    """Per-source flux comparison of flux-conserving vs bilinear downsampling."""
    hr = store.read_image(args.input)
    params = _detection_params(args)
    spec = ResampleSpec.for_image(hr.wcs, args.scale)
    lr_flux = downsample_flux(hr, spec)
    lr_bil = downsample_bilinear(hr, args.scale)

    catalog = phot.detect_sources(lr_flux, params)
    zero_bg = phot.Background(0.0, 0.0)
    v_fc = phot.photometer_with_catalog(lr_flux, catalog, params, zero_bg)
    v_bil = phot.photometer_with_catalog(lr_bil, catalog, params, zero_bg)
    rows = [{"id": s.id, "flux_conserving": f, "bilinear": b}
            for s, f, b in zip(catalog, v_fc, v_bil)]
    table = {
        "scale": args.scale,
        "n_sources": len(rows),
        "flux_mean_conserving": float(np.mean(v_fc)) if rows else None,
        "flux_mean_bilinear": float(np.mean(v_bil)) if rows else None,
        "sources": rows,
    }
    _emit(table, args.out)
    return 0


# ---------------------------------------------------------------------------
# Pipeline and evaluation
# ---------------------------------------------------------------------------

def _load_tile(tile_cfg: dict):
    if "path" in tile_cfg:
        img = store.read_image(tile_cfg["path"])
        return img, None
    spec = SynthSpec(**tile_cfg["synth"])
    img, catalog = generate(spec)
    if tile_cfg.get("nan_fraction", 0) > 0:
        img = inject_nan_regions(img, tile_cfg["nan_fraction"], spec.seed + 1)
    return img, catalog


def run_pipeline(cfg: dict) -> tuple[dict, int]:
    """Build the dataset described by a config dict; returns (summary, exit code)."""
    out_root = Path(cfg["out"])
    out_root.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))
    scales = [int(s) for s in cfg.get("scales", [2])]
    psf_cfg = cfg.get("psf", {})
    policy = psf_cfg.get("policy", "gaussian")
    sigma_range = tuple(psf_cfg.get("sigma_range", (0.8, 1.2)))
    r_range = tuple(psf_cfg.get("r_range", (1.9, 2.2)))
    patch = PatchSpec(**cfg.get("patch", {}))
    detection = phot.DetectionParams(**cfg.get("detection", {}))
    emit_maps = bool(cfg.get("emit_flux_maps", False))
    lam = float(cfg.get("lambda", fm.DEFAULT_LAMBDA))

    tiles = cfg.get("tiles", [])
    seeds = np.random.SeedSequence(seed).spawn(max(len(tiles), 1))
    tile_reports = []
    failed = 0
    for idx, tile_cfg in enumerate(tiles):
        name = tile_cfg.get("name", f"tile{idx}")
        report = {"tile": name}
        try:
            rng = np.random.default_rng(seeds[idx])
            hr, truth = _load_tile(tile_cfg)
            psf = sample_psf(policy, rng, sigma_range, r_range)
            blurred = convolve(hr, psf.kernel())
            sum_hr = hr.sum_flux()
            sum_blur = blurred.sum_flux()
            report["psf"] = psf.to_dict()
            report["blur_residual"] = abs(sum_blur - sum_hr) / abs(sum_hr) \
                if sum_hr else 0.0
            report["scales"] = {}
            for s in scales:
                spec = ResampleSpec.for_image(blurred.wcs, s)
                lr = downsample_flux(blurred, spec)
                pairs, rejections = subdivide(blurred, lr, s, patch,
                                              detection=detection,
                                              tile=name, psf=psf)
                s_dir = out_root / f"s{s}"
                s_dir.mkdir(parents=True, exist_ok=True)
                manifests = []
                for hr_patch, lr_patch, manifest in pairs:
                    store.write_image(hr_patch, s_dir / manifest.hr_path)
                    store.write_image(lr_patch, s_dir / manifest.lr_path)
                    manifests.append(manifest)
                    if emit_maps:
                        cat = detect_and_measure(hr_patch, detection)
                        m = fm.build_flux_map((hr_patch.height, hr_patch.width),
                                              cat)
                        m = fm.normalize_map(m) if m.data.max() > 0 else m
                        stem = manifest.hr_path.replace("_hr.sfi", "")
                        store.write_catalog(cat, s_dir / f"{stem}_cat.csv")
                        store.write_image(
                            store.ImagePlane.from_array(
                                m.data.astype(np.float32), hr_patch.wcs),
                            s_dir / f"{stem}_map.sfi")
                store.write_manifest(manifests, s_dir / f"{name}_manifest.json")
                report["scales"][str(s)] = {
                    "retained": len(pairs),
                    "rejections": rejections,
                    "downsample_residual": conservation_residual(blurred, spec),
                }
            report["status"] = "ok"
        except Exception as exc:  # crash isolation: one bad tile cannot poison others
            report["status"] = "error"
            report["error"] = f"{type(exc).__name__}: {exc}"
            failed += 1
        tile_reports.append(report)

    summary = {
        "tiles": tile_reports,
        "n_tiles": len(tiles),
        "n_failed": failed,
        "scales": scales,
        "lambda": lam,
        "seed": seed,
    }
    (out_root / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    code = 0 if failed == 0 else (2 if failed < len(tiles) else 1)
    if not tiles:
        code = 0
    return summary, code


def cmd_pipeline(args) -> int:
    cfg = json.loads(Path(args.config).read_text())
    if args.out:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    summary, code = run_pipeline(cfg)
    _emit(summary, None)
    if summary["n_tiles"] and summary["n_failed"] == summary["n_tiles"]:
        return 1
    return code


def run_eval(gt_dir: str, pred_dir: str, params: phot.DetectionParams,
             region=None, bins: int = met.DEFAULT_BINS) -> dict:
    """Pair *.sfi files by name across two directories and evaluate each pair."""
    gt_files = {p.name: p for p in sorted(Path(gt_dir).glob("*.sfi"))}
    pred_files = {p.name: p for p in sorted(Path(pred_dir).glob("*.sfi"))}
    unpaired = sorted(set(gt_files) ^ set(pred_files))
    reports = {}
    errors = {}
    for name in sorted(set(gt_files) & set(pred_files)):
        try:
            gt = store.read_image(gt_files[name])
            pred = store.read_image(pred_files[name])
            reports[name] = met.compute_report(gt, pred, params,
                                               region=region, bins=bins).to_dict()
        except Exception as exc:  # keep evaluating the remaining pairs
            errors[name] = f"{type(exc).__name__}: {exc}"

    def _mean(key, finite_only=False):
        vals = [r[key] for r in reports.values() if r[key] is not None]
        if finite_only:
            vals = [v for v in vals if math.isfinite(v)]
        return float(np.mean(vals)) if vals else None

    aggregate = {
        "n_pairs": len(reports),
        "fe_mean": _mean("fe"),
        "psnr_mean": _mean("psnr", finite_only=True),
        "psnr_infinite_count": sum(r["psnr_infinite"] for r in reports.values()),
        "ssim_mean": _mean("ssim"),
    }
    return {"pairs": reports, "aggregate": aggregate,
            "unpaired": unpaired, "errors": errors}


def cmd_eval(args) -> int:
    region = tuple(args.region) if args.region else None
    result = run_eval(args.gt_dir, args.pred_dir, _detection_params(args),
                      region=region, bins=args.bins)
    _emit(result, args.out)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skyflux",
                                 description="Flux-conserving imaging pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic star field")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--n-sources", type=int, default=50, dest="n_sources")
    p.add_argument("--flux-range", type=float, nargs=2, default=[100.0, 10000.0],
                   dest="flux_range")
    p.add_argument("--sigma-range", type=float, nargs=2, default=[1.0, 2.0],
                   dest="sigma_range")
    p.add_argument("--axis-ratio-range", type=float, nargs=2, default=[1.0, 2.0],
                   dest="axis_ratio_range")
    p.add_argument("--background", type=float, nargs=2, default=[0.0, 0.0])
    p.add_argument("--pixel-scale", type=float, default=0.05, dest="pixel_scale")
    p.add_argument("--nan-fraction", type=float, default=0.0, dest="nan_fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--catalog", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("blur", help="convolve an image with a PSF kernel")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--psf", choices=["gaussian", "airy", "mixed"],
                   default="gaussian")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_blur)

    p = sub.add_parser("downsample", help="downsample an image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--method", choices=["flux", "bilinear"], default="flux")
    p.add_argument("--deficit-out", default=None, dest="deficit_out")
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("subdivide", help="split an HR/LR pair into patches")
    p.add_argument("--hr", required=True)
    p.add_argument("--lr", required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--patch", type=int, default=256)
    p.add_argument("--stride", type=int, default=256)
    p.add_argument("--min-valid", type=float, default=0.8, dest="min_valid")
    p.add_argument("--min-sources", type=int, default=1, dest="min_sources")
    p.add_argument("--tile", default="tile")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    _add_detection_flags(p)
    p.set_defaults(func=cmd_subdivide)

    p = sub.add_parser("detect", help="detect sources and measure their fluxes")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _add_detection_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("photometry",
                       help="measure fluxes at fixed catalog positions")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)
    _add_detection_flags(p)
    p.set_defaults(func=cmd_photometry)

    p = sub.add_parser("fluxmap", help="build a flux map from a catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--like", default=None,
                   help="take dims and WCS from this image")
    p.add_argument("--c-sigma", type=float, default=1.0, dest="c_sigma")
    p.add_argument("--normalize-map", action="store_true", dest="normalize_map")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fluxmap)

    p = sub.add_parser("fcl", help="flux consistency loss of a prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--lambda", type=float, default=fm.DEFAULT_LAMBDA, dest="lam")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fcl)

    p = sub.add_parser("fe", help="flux error between gt and prediction")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--residuals", default=None,
                   help="write the per-source residual CSV here")
    p.add_argument("--out", default=None)
    _add_detection_flags(p)
    p.set_defaults(func=cmd_fe)

    p = sub.add_parser("metrics", help="full metric report for a pair")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--region", type=int, nargs=4, default=None,
                   metavar=("ROW", "COL", "HEIGHT", "WIDTH"))
    p.add_argument("--bins", type=int, default=met.DEFAULT_BINS)
    p.add_argument("--out", default=None)
    _add_detection_flags(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("pipeline", help="run the dataset build from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="evaluate matching pairs across two dirs")
    p.add_argument("--gt-dir", required=True, dest="gt_dir")
    p.add_argument("--pred-dir", required=True, dest="pred_dir")
    p.add_argument("--region", type=int, nargs=4, default=None)
    p.add_argument("--bins", type=int, default=met.DEFAULT_BINS)
    p.add_argument("--out", default=None)
    _add_detection_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare-downsample",
                       help="flux-conserving vs bilinear flux table")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--out", default=None)
    _add_detection_flags(p)
    p.set_defaults(func=cmd_compare_downsample)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
