"""Token-lattice masks: symmetric checkerboard plus random/block/central baselines.

Masks are defined in token units. With 16x16-pixel tokens a 16x16-pixel mask
cell is ``cell_size=1`` and a 32x32-pixel cell is ``cell_size=2``; in general
``cell_size = mask_pixels // token_patch_size``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

STRATEGIES = ("checkerboard", "random", "block", "central", "derived")
PHASES = ("even", "odd")

# Sentinels for provenance fields a strategy does not use.
NO_CELL = 0
NO_PHASE = "-"
NO_SEED = -1


@dataclass(frozen=True)
class MaskProvenance:
    """How a mask was produced.

    Fields that the strategy does not use hold the module sentinels
    ``NO_CELL``, ``NO_PHASE`` and ``NO_SEED``.
    """

    strategy: str
    cell_size: int = NO_CELL
    phase: str = NO_PHASE
    ratio_target: float = 0.5
    seed: int = NO_SEED

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown mask strategy {self.strategy!r}")
        if self.phase not in PHASES + (NO_PHASE,):
            raise ValueError(f"unknown phase {self.phase!r}")


@dataclass(frozen=True, eq=False)
class TokenMask:
    """Boolean mask over a ``grid_h x grid_w`` token lattice (True = masked)."""

    bits: np.ndarray
    provenance: MaskProvenance = field(default_factory=lambda: MaskProvenance("derived"))

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"mask bits must be 2-D, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def grid_h(self) -> int:
        return self.bits.shape[0]

    @property
    def grid_w(self) -> int:
        return self.bits.shape[1]

    @property
    def num_tokens(self) -> int:
        return self.bits.size

    def count(self) -> int:
        return int(self.bits.sum())

    def ratio(self) -> float:
        return self.count() / self.num_tokens

    def flat(self) -> np.ndarray:
        """Row-major flattened bits, matching the patch token order."""
        return self.bits.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, TokenMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))

    def __invert__(self) -> TokenMask:
        return complement(self)

    def __and__(self, other: TokenMask) -> TokenMask:
        return intersect(self, other)

    def to_text(self) -> str:
        return mask_to_text(self)


def _phase_bit(phase) -> int:
    if phase in ("even", 0):
        return 0
    if phase in ("odd", 1):
        return 1
    raise ValueError(f"phase must be 'even' or 'odd', got {phase!r}")


def _check_ratio(ratio: float):
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")


def checkerboard_mask(grid_h: int, grid_w: int, cell_size: int, phase="even") -> TokenMask:
    """Alternating-cell mask; cells whose (row + col) cell parity equals ``phase`` are masked."""
    if cell_size < 1:
        raise ConfigError(f"cell_size must be >= 1, got {cell_size}")
    if grid_h % cell_size:
        raise ConfigError(f"cell_size {cell_size} does not divide grid_h {grid_h}")
    if grid_w % cell_size:
        raise ConfigError(f"cell_size {cell_size} does not divide grid_w {grid_w}")
    p = _phase_bit(phase)
    rows = np.arange(grid_h)[:, None] // cell_size
    cols = np.arange(grid_w)[None, :] // cell_size
    bits = (rows + cols) % 2 == p
    return TokenMask(bits, MaskProvenance("checkerboard", cell_size, PHASES[p], 0.5, NO_SEED))


def random_mask(grid_h: int, grid_w: int, ratio: float, seed: int) -> TokenMask:
    """Mask exactly ``round(ratio * N)`` tokens sampled uniformly without replacement."""
    _check_ratio(ratio)
    n = grid_h * grid_w
    k = int(round(ratio * n))
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(n)[:k]
    flat = np.zeros(n, dtype=bool)
    flat[chosen] = True
    return TokenMask(flat.reshape(grid_h, grid_w), MaskProvenance("random", NO_CELL, NO_PHASE, ratio, seed))


def default_block_size(grid_h: int, grid_w: int) -> int:
    return max(1, min(grid_h, grid_w) // 4)


def block_mask(grid_h: int, grid_w: int, ratio: float, seed: int, block_size: int | None = None) -> TokenMask:
    """Drop seeded square blocks (possibly overlapping) until the target count is first reached.

    Each block's top-left corner is drawn uniformly from the positions where the
    block fits. Placement stops as soon as the masked count is ``>= round(ratio * N)``,
    so the overshoot is at most ``block_size**2 - 1`` tokens.
    """
    _check_ratio(ratio)
    if block_size is None:
        block_size = default_block_size(grid_h, grid_w)
    if not 1 <= block_size <= min(grid_h, grid_w):
        raise ConfigError(f"block_size {block_size} does not fit a {grid_h}x{grid_w} grid")
    target = int(round(ratio * grid_h * grid_w))
    rng = np.random.default_rng(seed)
    bits = np.zeros((grid_h, grid_w), dtype=bool)
    while bits.sum() < target:
        r = int(rng.integers(0, grid_h - block_size + 1))
        c = int(rng.integers(0, grid_w - block_size + 1))
        bits[r:r + block_size, c:c + block_size] = True
    return TokenMask(bits, MaskProvenance("block", block_size, NO_PHASE, ratio, seed))


def central_mask(grid_h: int, grid_w: int, ratio: float) -> TokenMask:
    """Mask the centered square of side ``floor(sqrt(ratio * N))`` (clipped to the grid)."""
    _check_ratio(ratio)
    side = math.isqrt(int(math.floor(ratio * grid_h * grid_w)))
    side_h, side_w = min(side, grid_h), min(side, grid_w)
    top = (grid_h - side_h) // 2
    left = (grid_w - side_w) // 2
    bits = np.zeros((grid_h, grid_w), dtype=bool)
    bits[top:top + side_h, left:left + side_w] = True
    return TokenMask(bits, MaskProvenance("central", NO_CELL, NO_PHASE, ratio, NO_SEED))


def _check_same_grid(a: TokenMask, b: TokenMask):
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask grids differ: {a.grid_h}x{a.grid_w} vs {b.grid_h}x{b.grid_w}")


def intersect(a: TokenMask, b: TokenMask) -> TokenMask:
    _check_same_grid(a, b)
    bits = a.bits & b.bits
    return TokenMask(bits, MaskProvenance("derived", ratio_target=float(bits.mean())))


def complement(mask: TokenMask) -> TokenMask:
    prov = mask.provenance
    if prov.strategy == "checkerboard":
        flipped = "odd" if prov.phase == "even" else "even"
        return TokenMask(~mask.bits, MaskProvenance("checkerboard", prov.cell_size, flipped, 0.5, NO_SEED))
    return TokenMask(~mask.bits, MaskProvenance("derived", ratio_target=1.0 - mask.ratio()))


def full_mask(grid_h: int, grid_w: int, masked: bool) -> TokenMask:
    """All-masked (``masked=True``) or all-visible mask."""
    bits = np.full((grid_h, grid_w), masked, dtype=bool)
    return TokenMask(bits, MaskProvenance("derived", ratio_target=float(masked)))


def mask_stats(mask: TokenMask) -> dict:
    """Masked ratio, histogram of horizontal masked run lengths, and adjacency fraction.

    ``adjacency_fraction`` is the share of masked tokens that have at least one
    masked 4-neighbour (0.0 when nothing is masked).
    """
    bits = mask.bits
    runs: dict[int, int] = {}
    for row in bits:
        length = 0
        for v in list(row) + [False]:
            if v:
                length += 1
            elif length:
                runs[length] = runs.get(length, 0) + 1
                length = 0

    padded = np.pad(bits, 1, constant_values=False)
    neighbour = (
        padded[:-2, 1:-1] | padded[2:, 1:-1] | padded[1:-1, :-2] | padded[1:-1, 2:]
    )
    n_masked = int(bits.sum())
    adjacency = float((bits & neighbour).sum() / n_masked) if n_masked else 0.0
    return {
        "ratio": mask.ratio(),
        "run_length_histogram": dict(sorted(runs.items())),
        "adjacency_fraction": adjacency,
    }


def mask_to_text(mask: TokenMask) -> str:
    """Serialize as ``h w strategy cell phase ratio seed`` followed by h rows of 0/1."""
    p = mask.provenance
    header = f"{mask.grid_h} {mask.grid_w} {p.strategy} {p.cell_size} {p.phase} {p.ratio_target!r} {p.seed}"
    rows = ["".join("1" if b else "0" for b in row) for row in mask.bits]
    return "\n".join([header, *rows]) + "\n"


def mask_from_text(text: str) -> TokenMask:
    lines = text.strip("\n").split("\n")
    fields = lines[0].split()
    if len(fields) != 7:
        raise ValueError(f"bad mask header: {lines[0]!r}")
    h, w = int(fields[0]), int(fields[1])
    prov = MaskProvenance(fields[2], int(fields[3]), fields[4], float(fields[5]), int(fields[6]))
    rows = lines[1:]
    if len(rows) != h or any(len(r) != w or set(r) - {"0", "1"} for r in rows):
        raise ValueError(f"mask body does not match a {h}x{w} grid")
    bits = np.array([[c == "1" for c in r] for r in rows], dtype=bool).reshape(h, w)
    return TokenMask(bits, prov)


def make_mask(strategy: str, grid_h: int, grid_w: int, *, cell_size: int = 1, phase="even",
              ratio: float = 0.5, seed: int = 0) -> TokenMask:
    """Dispatch to a generator by strategy name."""
    if strategy == "checkerboard":
        return checkerboard_mask(grid_h, grid_w, cell_size, phase)
    if strategy == "random":
        return random_mask(grid_h, grid_w, ratio, seed)
    if strategy == "block":
        return block_mask(grid_h, grid_w, ratio, seed)
    if strategy == "central":
        return central_mask(grid_h, grid_w, ratio)
    raise ValueError(f"unknown mask strategy {strategy!r}")


def batch_masks(strategy: str, n: int, grid_h: int, grid_w: int, rng: np.random.Generator, *,
                cell_size: int = 1, ratio: float = 0.5) -> np.ndarray:
    """Per-sample masks as a ``(n, grid_h * grid_w)`` bool array.

    Checkerboard phases and stochastic-mask seeds are drawn from ``rng``.
    """
    out = np.empty((n, grid_h * grid_w), dtype=bool)
    for i in range(n):
        if strategy == "checkerboard":
            m = checkerboard_mask(grid_h, grid_w, cell_size, PHASES[int(rng.integers(0, 2))])
        else:
            m = make_mask(strategy, grid_h, grid_w, ratio=ratio, seed=int(rng.integers(0, 2**31 - 1)))
        out[i] = m.flat()
    return out
