"""Patch tokenization of image batches.

Tokens are ordered row-major over the token lattice (top-left first) and each
token is the flattened ``(c, p, p)`` sub-image, channel-major.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ConfigError
from .masking import TokenMask


def patchify(images: torch.Tensor, p: int) -> torch.Tensor:
    """(n, c, h, w) -> (n, (h/p)*(w/p), c*p*p)."""
    if images.ndim != 4:
        raise ValueError(f"expected (n, c, h, w) images, got shape {tuple(images.shape)}")
    n, c, h, w = images.shape
    if h % p:
        raise ConfigError(f"patch size {p} does not divide image height {h}")
    if w % p:
        raise ConfigError(f"patch size {p} does not divide image width {w}")
    gh, gw = h // p, w // p
    x = images.reshape(n, c, gh, p, gw, p)
    x = x.permute(0, 2, 4, 1, 3, 5)
    return x.reshape(n, gh * gw, c * p * p)


def unpatchify(patches: torch.Tensor, p: int, grid_h: int, grid_w: int | None = None) -> torch.Tensor:
    """Inverse of :func:`patchify`. ``grid_w`` defaults to ``grid_h``."""
    grid_w = grid_h if grid_w is None else grid_w
    n, t, d = patches.shape
    if t != grid_h * grid_w:
        raise ValueError(f"{t} tokens do not fill a {grid_h}x{grid_w} grid")
    if d % (p * p):
        raise ValueError(f"token dim {d} is not a multiple of p*p = {p * p}")
    c = d // (p * p)
    x = patches.reshape(n, grid_h, grid_w, c, p, p)
    x = x.permute(0, 3, 1, 4, 2, 5)
    return x.reshape(n, c, grid_h * p, grid_w * p)


def as_token_mask(mask, n: int, t: int, device=None) -> torch.Tensor:
    """Coerce a TokenMask, array or tensor into a ``(n, t)`` bool tensor."""
    if isinstance(mask, TokenMask):
        if mask.num_tokens != t:
            raise ValueError(f"mask has {mask.num_tokens} tokens, sequence has {t}")
        m = torch.from_numpy(mask.flat().copy())
    elif isinstance(mask, np.ndarray):
        m = torch.from_numpy(mask.astype(bool))
    else:
        m = torch.as_tensor(mask, dtype=torch.bool)
    if m.ndim == 1:
        m = m.unsqueeze(0)
    if m.ndim == 3:
        m = m.reshape(m.shape[0], -1)
    if m.shape[-1] != t:
        raise ValueError(f"mask has {m.shape[-1]} tokens, sequence has {t}")
    if m.shape[0] not in (1, n):
        raise ValueError(f"mask batch {m.shape[0]} does not match batch {n}")
    return m.expand(n, t).to(device)


def apply_mask(tokens: torch.Tensor, mask, mask_token: torch.Tensor) -> torch.Tensor:
    """Replace embedded tokens at masked positions with the shared ``mask_token``."""
    n, t, _ = tokens.shape
    m = as_token_mask(mask, n, t, tokens.device)
    return torch.where(m.unsqueeze(-1), mask_token.to(tokens.dtype).expand_as(tokens), tokens)
