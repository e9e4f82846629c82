"""PPM renderings of masks and of masked reconstructions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import write_ppm
from .errors import ConfigError
from .masking import TokenMask, make_mask
from .model import SymMIM
from .patching import patchify, unpatchify

MASK_GRAY = 0.5


@dataclass(frozen=True)
class MaskSpec:
    name: str
    strategy: str
    cell_size: int = 1
    ratio: float = 0.5
    phase: str = "even"
    seed: int = 0

    def build(self, grid: int) -> TokenMask:
        if self.strategy == "checkerboard" and grid % self.cell_size:
            raise ConfigError(f"mask {self.name}: cell {self.cell_size} does not divide token grid {grid}")
        return make_mask(self.strategy, grid, grid, cell_size=self.cell_size, phase=self.phase,
                         ratio=self.ratio, seed=self.seed)


# Random, very small, small and large symmetric masks, in token units.
DEFAULT_MASK_SPECS = (
    MaskSpec("random_0.75", "random", ratio=0.75),
    MaskSpec("checker_cell1", "checkerboard", cell_size=1),
    MaskSpec("checker_cell2", "checkerboard", cell_size=2),
    MaskSpec("checker_cell4", "checkerboard", cell_size=4),
)


def to_uint8(x: torch.Tensor | np.ndarray) -> np.ndarray:
    """(3, h, w) floats in [0, 1] -> (h, w, 3) uint8."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def pixel_mask(mask: TokenMask, p: int) -> np.ndarray:
    """Token mask upsampled to a (h, w) pixel mask."""
    return np.kron(mask.bits, np.ones((p, p), dtype=bool)).astype(bool)


@torch.no_grad()
def reconstruction_panels(model: SymMIM, images: torch.Tensor, mask: TokenMask):
    """Return (original, masked input, composed reconstruction) as float arrays (n, 3, h, w)."""
    model.eval()
    p = model.patch_size
    if images.shape[-1] != model.encoder_cfg.image_size or images.shape[-2] != model.encoder_cfg.image_size:
        raise ConfigError(f"images are {tuple(images.shape[-2:])}, model expects {model.encoder_cfg.image_size}")
    if mask.grid_h != model.grid or mask.grid_w != model.grid:
        raise ConfigError(f"mask grid {mask.grid_h}x{mask.grid_w} does not match token grid {model.grid}")
    dtype = next(model.parameters()).dtype
    patches = patchify(images.to(dtype), p)
    pred = unpatchify(model.reconstruct(model.features(patches, mask)), p, model.grid).clamp(0, 1)
    original = images.double().numpy()
    pm = pixel_mask(mask, p)[None, None]
    masked = np.where(pm, MASK_GRAY, original)
    composed = np.where(pm, pred.double().numpy(), original)
    return original, masked, composed


def render_reconstructions(checkpoint, images: torch.Tensor, mask_specs=DEFAULT_MASK_SPECS, out_dir=".") -> list[Path]:
    """One P6 grid per mask spec: a row per image of [original | masked input | reconstruction].

    Reconstructions keep original pixels at visible positions, so each grid is
    (rows * h) x (3 * w) pixels.
    """
    if isinstance(checkpoint, SymMIM):
        model = checkpoint
    else:
        from .checkpoint import load_checkpoint
        model, _, _ = load_checkpoint(checkpoint)
    masks = [spec.build(model.grid) for spec in mask_specs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for spec, mask in zip(mask_specs, masks):
        original, masked, composed = reconstruction_panels(model, images, mask)
        rows = [np.concatenate([to_uint8(a), to_uint8(b), to_uint8(c)], axis=1)
                for a, b, c in zip(original, masked, composed)]
        path = out / f"recon_{spec.name}.ppm"
        write_ppm(path, np.concatenate(rows, axis=0))
        paths.append(path)
    return paths


def render_mask(mask: TokenMask, p: int, path) -> Path:
    """Masked tokens black, visible tokens white, ``p`` pixels per token side."""
    pm = pixel_mask(mask, p)
    rgb = np.where(pm[..., None], 0, 255).astype(np.uint8).repeat(3, axis=2)
    write_ppm(path, rgb)
    return Path(path)
