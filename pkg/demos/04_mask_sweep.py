"""Masking-ratio sweep: ratio-based strategies need one run per ratio, the checkerboard needs one.

    python3 demos/04_mask_sweep.py [--steps 60] [--out demo_runs/sweep]
"""

import argparse
from dataclasses import replace

import torch

from symmim.config import RunConfig
from symmim.evaluate import masking_ratio_probe

torch.set_num_threads(1)
parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=60)
parser.add_argument("--out", default="demo_runs/sweep")
args = parser.parse_args()

ratios = [0.5, 0.75, 0.9]
strategies = ["random", "block", "central", "checkerboard"]
cfg = replace(RunConfig(), data_limit=256)
rows = masking_ratio_probe(cfg, None, ratios, strategies, args.out, pretrain_steps=args.steps)

print(f"{len(rows)} runs for {len(ratios)} ratios x {len(strategies) - 1} ratio-based strategies + 1 checkerboard\n")
print(f"{'strategy':<14}{'ratio':>6}{'accuracy':>10}")
for r in rows:
    print(f"{r.strategy:<14}{r.ratio:>6.2f}{r.accuracy:>10.3f}")
print(f"\nPlot data: {args.out}/mask_sweep.csv")
