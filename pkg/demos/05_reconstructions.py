"""Reconstruction grids for random, very small, small and large checkerboard masks.

Each PPM row is [original | masked input (gray) | reconstruction]. Visible
pixels in the reconstruction are copied from the original, so only the
masked regions show what the model predicts.

    python3 demos/05_reconstructions.py [--steps 200] [--out demo_runs/recon]
"""

import argparse
from dataclasses import replace

import torch

from symmim.config import RunConfig
from symmim.data import load_dataset, spec_from_config
from symmim.train import train_loop
from symmim.viz import DEFAULT_MASK_SPECS, reconstruction_panels, render_reconstructions

torch.set_num_threads(1)
parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=200)
parser.add_argument("--out", default="demo_runs/recon")
args = parser.parse_args()

cfg = replace(RunConfig(), total_steps=args.steps)
run = train_loop(cfg, None, f"{args.out}/train")
images = load_dataset(spec_from_config(cfg)).images[:4]
paths = render_reconstructions(run.model, images, out_dir=args.out)

print(f"{'mask':<16}{'masked L1':>10}")
for spec in DEFAULT_MASK_SPECS:
    original, masked, composed = reconstruction_panels(run.model, images, spec.build(cfg.encoder.grid))
    err = abs(composed - original).sum() / (masked == 0.5).sum()
    print(f"{spec.name:<16}{err:>10.4f}")
print("\n" + "\n".join(str(p) for p in paths))
