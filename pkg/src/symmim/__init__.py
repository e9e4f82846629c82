"""Symmetric checkerboard masking with an online/momentum dual encoder."""

from .config import EncoderConfig, HeadsConfig, RunConfig, full_scale_config
from .errors import ConfigError, TrainingError
from .losses import ContrastiveConfig, LossBreakdown, info_nce, loss_rec1, loss_rec2, token_info_nce, total_loss
from .masking import (
    MaskProvenance,
    TokenMask,
    block_mask,
    central_mask,
    checkerboard_mask,
    complement,
    intersect,
    mask_stats,
    random_mask,
)
from .model import SymMIM, build_model, ema_update, momentum_schedule
from .patching import apply_mask, patchify, unpatchify
from .train import train_loop
from .evaluate import linear_probe, masking_ratio_probe, run_ablation
from .viz import render_mask, render_reconstructions

__version__ = "0.1.0"
