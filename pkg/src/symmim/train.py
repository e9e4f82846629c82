"""Dual-mask training step, schedules, and the checkpointing loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import DatasetSpec, StepBatches, load_dataset, spec_from_config
from .errors import ConfigError, TrainingError
from .losses import ContrastiveConfig, LossBreakdown, loss_rec1, loss_rec2, token_info_nce, total_loss
from .masking import batch_masks
from .model import SymMIM, build_model, ema_update, momentum_schedule
from .patching import patchify

log = logging.getLogger(__name__)

CSV_FIELDS = ("step", "rec1", "rec2", "con", "total", "m", "lr", "wall_ms")


@dataclass(frozen=True)
class StepRecord:
    step: int
    rec1: float
    rec2: float
    con: float
    total: float
    m: float
    lr: float
    wall_ms: float

    def row(self) -> dict:
        return {
            "step": self.step,
            **{k: repr(float(getattr(self, k))) for k in CSV_FIELDS[1:-1]},
            "wall_ms": f"{self.wall_ms:.3f}",
        }


def lr_at(step: int, cfg: RunConfig) -> float:
    """Linear warmup over ``warmup_steps`` then cosine decay to 0 at ``total_steps``."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def make_optimizer(model: SymMIM, cfg: RunConfig) -> torch.optim.AdamW:
    """AdamW over theta_q only; biases, norms and the mask token are not decayed."""
    decay, no_decay = [], []
    for _, p in model.online.named_parameters():
        (no_decay if p.ndim <= 1 else decay).append(p)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=cfg.lr, betas=(0.9, 0.999))


def draw_masks(cfg: RunConfig, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample online (M1) and momentum (M2) masks, each ``(n, t)``.

    M1 uses ``cfg.mask_strategy`` (the small checkerboard by default), M2 is
    always the large checkerboard. Phases are drawn independently per branch.
    """
    g = cfg.encoder.grid
    m1 = batch_masks(cfg.mask_strategy, n, g, g, rng, cell_size=cfg.small_cell, ratio=cfg.mask_ratio)
    m2 = batch_masks("checkerboard", n, g, g, rng, cell_size=cfg.large_cell)
    return m1, m2


def momentum_targets(model: SymMIM, images: torch.Tensor, m2):
    """Stop-gradient outputs of the momentum branch: (pixel predictions, projector embeddings)."""
    _, pixels, keys = model.forward_momentum(patchify(images, model.patch_size), m2)
    return pixels, keys


def compute_losses(model: SymMIM, images: torch.Tensor, m1, m2, cfg: RunConfig, targets=None) -> LossBreakdown:
    """Forward both branches on the same images and combine the active loss terms.

    ``targets`` may carry precomputed :func:`momentum_targets`, which are then
    treated as constants.
    """
    patches = patchify(images, model.patch_size)
    _, pixels, queries = model.forward_online(patches, m1)
    rec1 = loss_rec1(pixels, patches, m1)
    rec2 = con = None
    empty = False
    if cfg.has("rec2") or cfg.has("con"):
        mom_pixels, keys = targets if targets is not None else momentum_targets(model, images, m2)
        if cfg.has("rec2"):
            rec2, empty = loss_rec2(pixels, mom_pixels, m1, m2)
        if cfg.has("con"):
            con = token_info_nce(queries, keys, m1, ContrastiveConfig(cfg.tau, cfg.key_scope))
    return total_loss(rec1, rec2, con, cfg.lambda_, cfg.loss_flags, empty)


def train_step(model: SymMIM, optimizer: torch.optim.Optimizer, images: torch.Tensor, cfg: RunConfig,
               rng: np.random.Generator) -> StepRecord:
    """One optimizer step on theta_q followed by one EMA update of theta_k."""
    t0 = time.perf_counter()
    step = model.step
    lr = lr_at(step, cfg)
    for group in optimizer.param_groups:
        group["lr"] = lr
    m1, m2 = draw_masks(cfg, images.shape[0], rng)
    try:
        breakdown = compute_losses(model, images, m1, m2, cfg)
    except FloatingPointError as exc:
        raise TrainingError(f"step {step + 1}: {exc}") from exc
    optimizer.zero_grad(set_to_none=True)
    breakdown.total.backward()
    optimizer.step()
    m = momentum_schedule(step, cfg.total_steps, cfg.m_base)
    ema_update(model, m)
    vals = breakdown.item()
    wall = (time.perf_counter() - t0) * 1000.0
    return StepRecord(model.step, vals["rec1"], vals["rec2"], vals["con"], vals["total"], m, lr, wall)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class RunResult:
    model: SymMIM
    records: list
    checkpoint: Path | None
    metrics: Path | None


def _rewrite_metrics(path: Path, upto: int):
    rows = [r for r in read_metrics(path) if int(r["step"]) <= upto] if path.exists() else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        w.writerows(rows)


def train_loop(cfg: RunConfig, dataset: DatasetSpec | torch.Tensor | None = None, out_dir=None,
               resume=None, dtype=torch.float32) -> RunResult:
    """Run ``cfg.total_steps`` steps, checkpointing and appending to ``metrics.csv`` in ``out_dir``.

    ``dataset`` is a DatasetSpec, an image tensor, or None (use the config's data
    fields). ``resume`` is a checkpoint path; its config must hash-match ``cfg``
    apart from ``total_steps`` and ``checkpoint_every``.
    """
    cfg.validate()
    if dataset is None:
        dataset = spec_from_config(cfg)
    images = dataset if torch.is_tensor(dataset) else load_dataset(dataset).images
    if images.shape[-1] != cfg.encoder.image_size or images.shape[-2] != cfg.encoder.image_size:
        raise ConfigError(f"images are {tuple(images.shape[-2:])}, config expects {cfg.encoder.image_size}")
    batches = StepBatches(images.to(dtype), cfg.batch_size, cfg.seed)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        model, saved, optimizer = load_checkpoint(resume, lambda m: make_optimizer(m, cfg), dtype)
        if config_mod.config_hash(saved) != config_mod.config_hash(cfg):
            diff = config_mod.config_diff(saved, cfg)
            raise ConfigError(f"resume config mismatch (hash differs on {', '.join(diff)})")
    else:
        model = build_model(cfg).to(dtype)
        optimizer = make_optimizer(model, cfg)

    metrics = out / "metrics.csv" if out is not None else None
    if metrics is not None:
        if resume is not None:
            _rewrite_metrics(metrics, model.step)
        else:
            _rewrite_metrics(metrics, -1)
        config_mod.save(cfg, out / "config.txt")

    records = []
    fh = open(metrics, "a", newline="") if metrics is not None else None
    try:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS) if fh else None
        while model.step < cfg.total_steps:
            step = model.step
            try:
                rec = train_step(model, optimizer, batches[step], cfg, step_rng(cfg.seed, step))
            except TrainingError:
                if out is not None:
                    save_checkpoint(out / "diagnostic.bin", model, cfg, optimizer)
                raise
            records.append(rec)
            if writer:
                writer.writerow(rec.row())
                fh.flush()
            if out is not None and cfg.checkpoint_every and model.step % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_{model.step:06d}.bin", model, cfg, optimizer)
    finally:
        if fh:
            fh.close()

    final = None
    if out is not None:
        final = out / "final.bin"
        save_checkpoint(final, model, cfg, optimizer)
    return RunResult(model, records, final, metrics)
