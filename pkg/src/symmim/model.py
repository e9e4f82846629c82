"""ViT encoder, MLP heads and the online/momentum dual encoder."""

from __future__ import annotations

import copy
import hashlib
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EncoderConfig, HeadsConfig
from .patching import apply_mask


def sincos_pos_embed_2d(dim: int, grid_h: int, grid_w: int) -> torch.Tensor:
    """Fixed 2-D sin-cos position table of shape (grid_h * grid_w, dim), row-major."""
    if dim % 4:
        raise ValueError(f"dim must be divisible by 4 for 2-D sin-cos embedding, got {dim}")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)
    ys, xs = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")

    def embed(pos):
        out = np.einsum("m,d->md", pos.reshape(-1).astype(np.float64), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    table = np.concatenate([embed(ys), embed(xs)], axis=1)
    return torch.from_numpy(table).float()


class DropPath(nn.Module):
    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x):
        if self.p == 0.0 or not self.training:
            return x
        keep = 1.0 - self.p
        shape = (x.shape[0],) + (1,) * (x.ndim - 1)
        return x * x.new_empty(shape).bernoulli_(keep) / keep


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        n, t, d = x.shape
        qkv = self.qkv(x).reshape(n, t, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * (q.shape[-1] ** -0.5)
        out = attn.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(n, t, d))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, drop_path: float = 0.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        self.drop_path = DropPath(drop_path)

    def forward(self, x):
        x = x + self.drop_path(self.attn(self.norm1(x)))
        x = x + self.drop_path(self.mlp(self.norm2(x)))
        return x


class ViTBackbone(nn.Module):
    """Patch embedding, shared mask token, fixed positional table and transformer blocks.

    No class token: every objective is per-token.
    """

    def __init__(self, cfg: EncoderConfig, in_chans: int = 3):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.grid = cfg.image_size // cfg.patch_size
        self.patch_dim = in_chans * cfg.patch_size ** 2
        self.patch_embed = nn.Linear(self.patch_dim, cfg.dim)
        self.mask_token = nn.Parameter(torch.zeros(cfg.dim))
        self.register_buffer("pos_embed", sincos_pos_embed_2d(cfg.dim, self.grid, self.grid), persistent=False)
        rates = np.linspace(0.0, cfg.drop_path, cfg.depth) if cfg.depth else []
        self.blocks = nn.ModuleList(Block(cfg.dim, cfg.heads, cfg.mlp_ratio, float(r)) for r in rates)
        self.norm = nn.LayerNorm(cfg.dim)
        self._init_weights()

    def _init_weights(self):
        nn.init.trunc_normal_(self.mask_token, std=0.02)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    def embed(self, patches: torch.Tensor, mask=None) -> torch.Tensor:
        """Linear patch embedding, mask-token substitution, then positional table."""
        x = self.patch_embed(patches)
        if mask is not None:
            x = apply_mask(x, mask, self.mask_token)
        return x + self.pos_embed.to(x.dtype)

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        """Transformer blocks and final norm over an embedded sequence; (n, t, dim) -> (n, t, dim)."""
        if tokens.ndim != 3 or tokens.shape[1] != self.num_tokens or tokens.shape[2] != self.cfg.dim:
            raise ValueError(
                f"expected (n, {self.num_tokens}, {self.cfg.dim}) tokens, got {tuple(tokens.shape)}"
            )
        for blk in self.blocks:
            tokens = blk(tokens)
        return self.norm(tokens)

    def forward(self, patches, mask=None):
        return self.encode(self.embed(patches, mask))


class MLPHead(nn.Module):
    """Per-token MLP with ReLU hidden layers and a linear output layer."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, layers: int):
        super().__init__()
        if layers < 1:
            raise ValueError("an MLP head needs at least one layer")
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        mods = []
        for i in range(layers):
            mods.append(nn.Linear(dims[i], dims[i + 1]))
            if i < layers - 1:
                mods.append(nn.ReLU())
        self.net = nn.Sequential(*mods)

    def forward(self, x):
        return self.net(x)


class SymMIM(nn.Module):
    """Online network (theta_q) and its EMA momentum copy (theta_k).

    ``online`` holds backbone, projector, predictor and the linear reconstruction
    head. ``momentum`` holds only backbone and projector; it is never trained by
    gradients and changes only through :func:`ema_update`.
    """

    def __init__(self, encoder: EncoderConfig, heads: HeadsConfig, in_chans: int = 3):
        super().__init__()
        heads.validate()
        self.encoder_cfg = encoder
        self.heads_cfg = heads
        backbone = ViTBackbone(encoder, in_chans)
        self.online = nn.ModuleDict({
            "backbone": backbone,
            "projector": MLPHead(encoder.dim, heads.proj_hidden, heads.proj_out, heads.proj_layers),
            "predictor": MLPHead(heads.proj_out, heads.pred_hidden, heads.pred_out, heads.pred_layers),
            "reconstructor": nn.Linear(encoder.dim, backbone.patch_dim),
        })
        self.momentum = nn.ModuleDict({
            "backbone": copy.deepcopy(self.online["backbone"]),
            "projector": copy.deepcopy(self.online["projector"]),
        })
        self.momentum.requires_grad_(False)
        self.m = 0.0
        self.step = 0

    @property
    def patch_size(self) -> int:
        return self.encoder_cfg.patch_size

    @property
    def grid(self) -> int:
        return self.online["backbone"].grid

    def online_parameters(self):
        return self.online.parameters()

    def momentum_parameters(self):
        return self.momentum.parameters()

    def reconstruct(self, features: torch.Tensor) -> torch.Tensor:
        return self.online["reconstructor"](features)

    def project(self, features: torch.Tensor) -> torch.Tensor:
        return self.online["projector"](features)

    def predict(self, embeddings: torch.Tensor) -> torch.Tensor:
        return self.online["predictor"](embeddings)

    def forward_online(self, patches, mask):
        """Returns (features, pixel predictions, predictor embeddings)."""
        feats = self.online["backbone"](patches, mask)
        return feats, self.reconstruct(feats), self.predict(self.project(feats))

    @torch.no_grad()
    def forward_momentum(self, patches, mask):
        """Returns (features, pixel predictions, projector embeddings), all detached.

        The momentum branch has no reconstruction head of its own, so pixels come
        from the online head under stop-gradient.
        """
        feats = self.momentum["backbone"](patches, mask)
        head = self.online["reconstructor"]
        pixels = F.linear(feats, head.weight.detach(), head.bias.detach())
        return feats, pixels, self.momentum["projector"](feats)

    def features(self, patches, mask=None) -> torch.Tensor:
        return self.online["backbone"](patches, mask)

    def check_momentum_structure(self):
        """Raise if theta_k is not isomorphic to the (backbone + projector) part of theta_q."""
        online = {k: v.shape for k, v in self.online.state_dict().items()
                  if k.split(".")[0] in self.momentum}
        mom = {k: v.shape for k, v in self.momentum.state_dict().items()}
        if online != mom:
            missing = sorted(set(online) ^ set(mom))
            raise ValueError(f"momentum parameters do not mirror the online subtree: {missing[:5]}")


def ema_update(model: SymMIM, m: float) -> SymMIM:
    """theta_k <- m * theta_k + (1 - m) * theta_q, elementwise; increments ``model.step``."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum coefficient must be in [0, 1], got {m}")
    with torch.no_grad():
        for name, mod in model.momentum.items():
            src = dict(model.online[name].named_parameters())
            for pname, pk in mod.named_parameters():
                pk.mul_(m).add_(src[pname].detach(), alpha=1.0 - m)
    model.m = m
    model.step += 1
    return model


def momentum_schedule(step: int, total_steps: int, m_base: float) -> float:
    """Cosine ramp of the momentum coefficient from ``m_base`` (step 0) to 1.0 (last step)."""
    if total_steps <= 0:
        return m_base
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == total_steps:
        return 1.0
    return 1.0 - (1.0 - m_base) * (math.cos(math.pi * step / total_steps) + 1.0) / 2.0


def param_hash(module: nn.Module) -> str:
    """SHA-256 over parameter names and raw values, for mutation audits."""
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def build_model(cfg) -> SymMIM:
    """Seeded construction from a RunConfig."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        return SymMIM(cfg.encoder, cfg.heads)
