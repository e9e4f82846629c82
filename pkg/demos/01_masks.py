"""Compare the masking strategies on an 8x8 token grid.

The symmetric checkerboard always hides exactly half of the tokens and never
leaves two masked tokens side by side at cell size 1. Random, block and
central masks need a ratio, and their spatial structure varies with it.

    python3 demos/01_masks.py [--out demo_runs/masks]
"""

import argparse
from pathlib import Path

from symmim.masking import checkerboard_mask, intersect, make_mask, mask_stats
from symmim.viz import render_mask

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="demo_runs/masks")
args = parser.parse_args()
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

print("Checkerboard, cell 1 (online branch) and cell 2 (momentum branch):\n")
small, large = checkerboard_mask(8, 8, 1), checkerboard_mask(8, 8, 2, "odd")
for a, b in zip(small.to_text().splitlines()[1:], large.to_text().splitlines()[1:]):
    print(f"  {a}    {b}")
both = intersect(small, large)
print(f"\nTokens masked in both branches: {both.count()} of 64. "
      "Only these contribute to the cross-branch reconstruction loss.\n")

print(f"{'mask':<22}{'ratio':>7}{'adjacent':>10}  run lengths")
for name, kw in [
    ("checkerboard c=1", dict(strategy="checkerboard", cell_size=1)),
    ("checkerboard c=2", dict(strategy="checkerboard", cell_size=2)),
    ("checkerboard c=4", dict(strategy="checkerboard", cell_size=4)),
    ("random 0.50", dict(strategy="random", ratio=0.5, seed=0)),
    ("random 0.75", dict(strategy="random", ratio=0.75, seed=0)),
    ("block 0.50", dict(strategy="block", ratio=0.5, seed=0)),
    ("central 0.50", dict(strategy="central", ratio=0.5)),
]:
    m = make_mask(grid_h=8, grid_w=8, **kw)
    s = mask_stats(m)
    runs = dict(sorted(s["run_length_histogram"].items()))
    print(f"{name:<22}{s['ratio']:>7.3f}{s['adjacency_fraction']:>10.3f}  {runs}")
    render_mask(m, 8, out / f"{name.replace(' ', '_').replace('=', '')}.ppm")

print(f"\nMask images (black = masked) written to {out}/")
