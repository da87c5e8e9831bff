"""
Toy training loop: L1 plus the flux-weighted term, seeded and deterministic,
with per-epoch evaluation delegated to the skyflux metrics CLI.
"""

from __future__ import annotations

import csv
import json
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import ToyDataset, run_skyflux
from .losses import DEFAULT_LAMBDA, total_loss
from .model import ToyRestorer
from .sfi import write_sfi


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lam: float = DEFAULT_LAMBDA
    epochs: int = 30
    lr: float = 2e-4
    seed: int = 0
    channels: int = 16
    prompts: int = 5
    decay_epoch: int | None = None  # optional x0.01 step decay
    eval_every: int = 0             # epochs between CLI evals; 0 = final only


@dataclass
class TrainResult:
    model: ToyRestorer
    curves: list[dict] = field(default_factory=list)
    final_eval: dict | None = None


def _to_tensor(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr)).float().unsqueeze(0)


def evaluate_with_cli(model: ToyRestorer, dataset: ToyDataset,
                      workdir=None) -> dict:
    """Write predictions as SFI and score them with the skyflux eval CLI."""
    tmp_ctx = tempfile.TemporaryDirectory() if workdir is None else None
    base = Path(workdir) if workdir is not None else Path(tmp_ctx.name)
    gt_dir = base / "gt"
    pred_dir = base / "pred"
    gt_dir.mkdir(parents=True, exist_ok=True)
    pred_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    with torch.no_grad():
        for sample in dataset:
            pred = model(_to_tensor(sample.lr).unsqueeze(0),
                         _to_tensor(sample.guide).unsqueeze(0))
            write_sfi(sample.hr, gt_dir / f"{sample.name}.sfi")
            write_sfi(pred[0, 0].numpy(), pred_dir / f"{sample.name}.sfi")
    out = base / "eval.json"
    run_skyflux("eval", "--gt-dir", gt_dir, "--pred-dir", pred_dir,
                "--out", out)
    result = json.loads(out.read_text())["aggregate"]
    if tmp_ctx is not None:
        tmp_ctx.cleanup()
    return result


def train_toy(dataset: ToyDataset, cfg: TrainConfig,
              val_dataset: ToyDataset | None = None,
              curves_path=None, init_state: dict | None = None) -> TrainResult:
    """Optimize L1 + lam * flux-weighted loss over the toy triplets.

    The first epoch ramps the learning rate linearly from zero; training
    aborts with diagnostics if the loss stops being finite.  Identical seeds
    give bit-identical runs, and lam == 0 takes the plain-L1 code path.
    ``init_state`` warm-starts the weights (paired ablations fine-tune the
    same checkpoint under different losses with identical data order).
    """
    if len(dataset) < 8:
        raise ValueError("need at least 8 training triplets")
    torch.manual_seed(cfg.seed)
    sample = dataset[0]
    model = ToyRestorer(sample.lr.shape[0], sample.lr.shape[1],
                        scale=dataset.scale, channels=cfg.channels,
                        k=cfg.prompts)
    if init_state is not None:
        model.load_state_dict(init_state)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    tensors = [(
        _to_tensor(s.lr).unsqueeze(0),
        _to_tensor(s.hr).unsqueeze(0),
        _to_tensor(s.fcl_map).unsqueeze(0),
        _to_tensor(s.guide).unsqueeze(0),
    ) for s in dataset]

    gen = torch.Generator().manual_seed(cfg.seed)
    steps_per_epoch = len(tensors)
    step = 0
    curves = []
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(len(tensors), generator=gen).tolist()
        epoch_loss = 0.0
        for idx in order:
            lr_in, hr, fcl_map, guide = tensors[idx]
            if epoch == 0:
                rate = cfg.lr * (step + 1) / steps_per_epoch
            elif cfg.decay_epoch is not None and epoch >= cfg.decay_epoch:
                rate = cfg.lr * 0.01
            else:
                rate = cfg.lr
            for group in opt.param_groups:
                group["lr"] = rate
            opt.zero_grad()
            pred = model(lr_in, guide)
            loss, recon, flux = total_loss(pred, hr, fcl_map, cfg.lam)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"recon={float(recon)}, "
                    f"flux={None if flux is None else float(flux)}, lr={rate}")
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            step += 1
        record = {"epoch": epoch, "loss": epoch_loss / steps_per_epoch}
        if cfg.eval_every and val_dataset is not None \
                and (epoch + 1) % cfg.eval_every == 0:
            agg = evaluate_with_cli(model, val_dataset)
            record.update(fe=agg["fe_mean"], psnr=agg["psnr_mean"])
        curves.append(record)

    final_eval = None
    if val_dataset is not None and len(val_dataset):
        final_eval = evaluate_with_cli(model, val_dataset)
    if curves_path is not None:
        with open(curves_path, "w", newline="") as fh:
            fields = sorted({k for row in curves for k in row})
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(curves)
    return TrainResult(model=model, curves=curves, final_eval=final_eval)
