"""
Toy dataset construction and loading.

The dataset is produced entirely through the skyflux command line: the
pipeline builds HR/LR patch pairs with ground-truth flux maps, and a second
pass derives a guidance map from each LR patch (detection + flux map on the
input, the same recipe the restoration model sees at inference time).
Samples are stored as SFI files next to the pipeline's own outputs.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sfi import read_sfi, write_sfi

SKYFLUX = "skyflux"


def run_skyflux(*args: str) -> str:
    """Run one skyflux subcommand; raises on a nonzero exit."""
    proc = subprocess.run([SKYFLUX, *map(str, args)], capture_output=True,
                          text=True)
    if proc.returncode != 0:
        raise RuntimeError(
            f"skyflux {' '.join(map(str, args))} failed "
            f"(exit {proc.returncode}):\n{proc.stderr}")
    return proc.stdout


def build_toy_dataset(root, n_tiles: int = 3, tile_size: int = 256,
                      patch: int = 64, scale: int = 2, seed: int = 0,
                      sources_per_tile: int = 26) -> Path:
    """Build HR/LR/flux-map/guidance quadruples under ``root``.

    Everything runs through the skyflux CLI; the guidance map for each LR
    patch comes from detecting on that patch and stamping its own flux map
    (normalized).  LR patches with no detectable sources get a zero guidance
    map, which simply disables the prompt path for that sample.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = {
        "seed": seed,
        "out": str(root),
        "scales": [scale],
        "psf": {"policy": "gaussian"},
        "patch": {"hr_patch": patch, "stride": patch},
        "emit_flux_maps": True,
        "tiles": [
            {"name": f"t{i}",
             "synth": {"width": tile_size, "height": tile_size,
                       "n_sources": sources_per_tile, "seed": seed * 1000 + i,
                       # bright sources keep the per-source flux errors core
                       # dominated instead of aperture-background dominated
                       "flux_range": [500.0, 50000.0],
                       "background": [0.0, 0.0]}}
            for i in range(n_tiles)
        ],
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2))
    run_skyflux("pipeline", "--config", cfg_path)

    s_dir = root / f"s{scale}"
    for lr_path in sorted(s_dir.glob("*_lr.sfi")):
        stem = lr_path.name[:-len("_lr.sfi")]
        guide_path = s_dir / f"{stem}_guide.sfi"
        cat_path = s_dir / f"{stem}_lrcat.csv"
        try:
            run_skyflux("detect", "--in", lr_path, "--out", cat_path)
            run_skyflux("fluxmap", "--catalog", cat_path, "--like", lr_path,
                        "--normalize-map", "--out", guide_path)
        except RuntimeError:
            data, wcs = read_sfi(lr_path)
            write_sfi(np.zeros_like(data), guide_path, wcs)
    return s_dir


@dataclass
class ToySample:
    name: str
    lr: np.ndarray       # input, rescaled by 1/scale^2
    hr: np.ndarray       # target
    fcl_map: np.ndarray  # HR-sized loss weight map (from the gt catalog)
    guide: np.ndarray    # LR-sized guidance map (from the LR input)


class ToyDataset:
    """Loads the quadruples written by build_toy_dataset.

    LR inputs carry block-summed flux (scale^2 times the HR level); they are
    divided by scale^2 so input and target live on the same scale.
    """

    def __init__(self, s_dir, scale: int = 2):
        self.scale = scale
        self.samples: list[ToySample] = []
        s_dir = Path(s_dir)
        for hr_path in sorted(s_dir.glob("*_hr.sfi")):
            stem = hr_path.name[:-len("_hr.sfi")]
            lr, _ = read_sfi(s_dir / f"{stem}_lr.sfi")
            hr, _ = read_sfi(hr_path)
            fcl_map, _ = read_sfi(s_dir / f"{stem}_map.sfi")
            guide, _ = read_sfi(s_dir / f"{stem}_guide.sfi")
            self.samples.append(ToySample(
                name=stem, lr=lr / scale ** 2, hr=hr,
                fcl_map=fcl_map, guide=guide))

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, idx) -> ToySample:
        return self.samples[idx]

    def split(self, n_train: int):
        train = ToyDataset.__new__(ToyDataset)
        train.scale = self.scale
        train.samples = self.samples[:n_train]
        val = ToyDataset.__new__(ToyDataset)
        val.scale = self.scale
        val.samples = self.samples[n_train:]
        return train, val
