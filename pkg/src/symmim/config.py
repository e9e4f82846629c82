"""Run configuration and its flat ``key = value`` file format.

Nested records are flattened with dotted keys (``encoder.depth = 4``);
``loss_flags`` is a comma-separated subset of ``rec1,rec2,con``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

LOSS_TERMS = ("rec1", "rec2", "con")
KEY_SCOPES = ("same_image", "batch")
MASK_STRATEGIES = ("checkerboard", "random", "block", "central")
DATA_SOURCES = ("synthetic", "image_folder", "cifar_binary")


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 4
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    patch_size: int = 4
    image_size: int = 32
    drop_path: float = 0.0

    def validate(self):
        if self.dim % self.heads:
            raise ConfigError(f"encoder.dim {self.dim} not divisible by encoder.heads {self.heads}")
        if self.dim % 4:
            raise ConfigError(f"encoder.dim {self.dim} must be divisible by 4 (2-D positional table)")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"encoder.patch_size {self.patch_size} does not divide encoder.image_size {self.image_size}"
            )
        if self.depth < 0 or self.dim < 1:
            raise ConfigError("encoder.depth must be >= 0 and encoder.dim >= 1")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size


@dataclass(frozen=True)
class HeadsConfig:
    proj_layers: int = 3
    proj_hidden: int = 256
    proj_out: int = 64
    pred_layers: int = 2
    pred_hidden: int = 256
    pred_out: int = 64

    def validate(self):
        if self.proj_out != self.pred_out:
            raise ConfigError(
                f"heads.proj_out {self.proj_out} must equal heads.pred_out {self.pred_out} (shared contrastive space)"
            )
        if self.proj_layers < 1 or self.pred_layers < 1:
            raise ConfigError("heads need at least one layer")


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: HeadsConfig = field(default_factory=HeadsConfig)
    small_cell: int = 1
    large_cell: int = 2
    tau: float = 0.1
    lambda_: float = 1.0
    key_scope: str = "same_image"
    m_base: float = 0.996
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_steps: int = 10
    total_steps: int = 200
    batch_size: int = 32
    seed: int = 0
    loss_flags: tuple = LOSS_TERMS
    checkpoint_every: int = 0
    # online-branch mask for baseline sweeps; "checkerboard" uses small_cell
    mask_strategy: str = "checkerboard"
    mask_ratio: float = 0.5
    data_source: str = "synthetic"
    data_root: str = ""
    data_limit: int = 512
    probe_steps: int = 300
    probe_fraction: float = 0.75

    def validate(self) -> RunConfig:
        self.encoder.validate()
        self.heads.validate()
        grid = self.encoder.grid
        if self.small_cell < 1:
            raise ConfigError(f"small_cell must be >= 1, got {self.small_cell}")
        if not self.small_cell < self.large_cell:
            raise ConfigError(
                f"small_cell < large_cell violated: small_cell={self.small_cell}, large_cell={self.large_cell}"
            )
        for name in ("small_cell", "large_cell"):
            if grid % getattr(self, name):
                raise ConfigError(f"{name}={getattr(self, name)} does not divide the token grid {grid}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.m_base < 1.0:
            raise ConfigError(f"m_base must be in [0, 1), got {self.m_base}")
        if self.key_scope not in KEY_SCOPES:
            raise ConfigError(f"key_scope must be one of {KEY_SCOPES}, got {self.key_scope!r}")
        if self.mask_strategy not in MASK_STRATEGIES:
            raise ConfigError(f"mask_strategy must be one of {MASK_STRATEGIES}, got {self.mask_strategy!r}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1], got {self.mask_ratio}")
        if self.mask_strategy != "checkerboard":
            n = grid * grid
            too_small = round(self.mask_ratio * n) < 1
            if self.mask_strategy == "central":
                too_small = int(math.isqrt(int(math.floor(self.mask_ratio * n)))) < 1
            if too_small:
                raise ConfigError(f"mask_ratio {self.mask_ratio} masks no tokens on a {grid}x{grid} grid")
        if not set(self.loss_flags) <= set(LOSS_TERMS):
            raise ConfigError(f"loss_flags must be a subset of {LOSS_TERMS}, got {self.loss_flags}")
        if "rec1" not in self.loss_flags:
            raise ConfigError("loss_flags must include rec1")
        if self.data_source not in DATA_SOURCES:
            raise ConfigError(f"data_source must be one of {DATA_SOURCES}, got {self.data_source!r}")
        if self.data_source != "synthetic" and not self.data_root:
            raise ConfigError(f"data_root is required for data_source={self.data_source}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be >= 0")
        if self.total_steps < 0 or self.warmup_steps < 0 or self.checkpoint_every < 0:
            raise ConfigError("step counts must be >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.probe_fraction < 1.0:
            raise ConfigError(f"probe_fraction must be in (0, 1), got {self.probe_fraction}")
        return self

    def with_flags(self, *terms: str) -> RunConfig:
        return replace(self, loss_flags=tuple(t for t in LOSS_TERMS if t in terms))

    def has(self, term: str) -> bool:
        return term in self.loss_flags


def full_scale_config(**overrides) -> RunConfig:
    """ViT-B/16 at 224 px with 4096-wide heads and 256-d embeddings.

    Mask cells of 16 and 32 pixels are token cells 1 and 2.
    """
    cfg = RunConfig(
        encoder=EncoderConfig(depth=12, dim=768, heads=12, patch_size=16, image_size=224),
        heads=HeadsConfig(proj_hidden=4096, proj_out=256, pred_hidden=4096, pred_out=256),
        small_cell=1,
        large_cell=2,
        batch_size=256,
    )
    return replace(cfg, **overrides)


def _file_key(name: str) -> str:
    return "lambda" if name == "lambda_" else name


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_flat(cfg: RunConfig) -> dict[str, str]:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in fields(value):
                out[f"{f.name}.{sub.name}"] = _format(getattr(value, sub.name))
        else:
            out[_file_key(f.name)] = _format(value)
    return out


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(cfg).items())


def _parse(kind, raw: str, key: str):
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("tuple", tuple):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def from_flat(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    top, nested = {}, {"encoder": {}, "heads": {}}
    known = {_file_key(f.name): f for f in fields(RunConfig)}
    for key, raw in pairs.items():
        if "." in key:
            group, name = key.split(".", 1)
            if group not in nested:
                raise ConfigError(f"unknown config key {key!r}")
            sub = {f.name: f for f in fields(getattr(cfg, group))}
            if name not in sub:
                raise ConfigError(f"unknown config key {key!r}")
            nested[group][name] = _parse(sub[name].type, raw, key)
        else:
            if key not in known or key in nested:
                raise ConfigError(f"unknown config key {key!r}")
            f = known[key]
            top[f.name] = _parse(f.type, raw, key)
    for group, vals in nested.items():
        if vals:
            top[group] = replace(getattr(cfg, group), **vals)
    return replace(cfg, **top)


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return from_flat(pairs, base)


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def save(cfg: RunConfig, path):
    Path(path).write_text(dumps(cfg))


# Fields that may change between a checkpoint and its resumption.
RESUMABLE_KEYS = ("total_steps", "checkpoint_every")


def config_hash(cfg: RunConfig) -> str:
    flat = to_flat(cfg)
    for k in RESUMABLE_KEYS:
        flat.pop(k)
    text = "".join(f"{k}={v}\n" for k, v in sorted(flat.items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def config_diff(a: RunConfig, b: RunConfig) -> list[str]:
    fa, fb = to_flat(a), to_flat(b)
    return sorted(k for k in fa if fa[k] != fb[k])
