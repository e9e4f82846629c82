"""Command-line entry point: ``symmim <subcommand> ...``.

Exit codes: 0 success, 1 invalid input (checked before anything is written),
2 failure while running.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import torch

from . import config as config_mod
from .data import DatasetSpec, load_dataset
from .errors import ConfigError
from .masking import checkerboard_mask

log = logging.getLogger("symmim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="symmim", description="Symmetric-mask dual-encoder pretraining lab.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="pretrain from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("probe", help="linear probe of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="'synthetic[:N]', a CIFAR .bin file/dir, or a PPM folder")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("ablate", help="loss-term ablation (four runs)")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("mask-sweep", help="masking-ratio probe over strategies")
    p.add_argument("--config", required=True)
    p.add_argument("--ratios", nargs="+", required=True)
    p.add_argument("--strategies", nargs="+", required=True)
    p.add_argument("--steps", type=int, help="pretraining steps per run (default: config total_steps)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("viz", help="reconstruction grids for the four mask types")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True, help="same forms as probe --data")
    p.add_argument("--count", type=int, default=4, help="images per grid")

    p = sub.add_parser("mask-show", help="print a checkerboard mask")
    p.add_argument("--grid", required=True, help="HxW in tokens")
    p.add_argument("--cell", type=int, required=True)
    p.add_argument("--phase", choices=("even", "odd"), default="even")
    return parser


def _split_list(values) -> list[str]:
    return [v for item in values for v in item.split(",") if v]


def output_dir(command: str) -> Path:
    """Fresh timestamped directory under $SYMMIM_OUT (default ./runs)."""
    root = Path(os.environ.get("SYMMIM_OUT", "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = root / f"{command}-{stamp}"
    k = 1
    while path.exists():
        path = root / f"{command}-{stamp}-{k}"
        k += 1
    path.mkdir(parents=True)
    return path


def _load_config(path, seed) -> config_mod.RunConfig:
    if not Path(path).is_file():
        raise ConfigError(f"config file {path} not found")
    cfg = config_mod.load(path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg.validate()


def data_spec(arg: str, image_size: int, seed: int) -> DatasetSpec:
    if arg == "synthetic" or arg.startswith("synthetic:"):
        limit = int(arg.split(":", 1)[1]) if ":" in arg else 512
        return DatasetSpec("synthetic", "", image_size, limit, seed)
    path = Path(arg)
    if not path.exists():
        raise ConfigError(f"data path {arg} does not exist")
    if path.is_file() or any(path.glob("*.bin")):
        return DatasetSpec("cifar_binary", str(path), image_size, None, seed)
    return DatasetSpec("image_folder", str(path), image_size, None, seed)


def _echo(cfg, out: Path):
    config_mod.save(cfg, out / "config.txt")


def cmd_pretrain(args):
    from .train import train_loop

    cfg = _load_config(args.config, args.seed)
    if args.resume:
        from .checkpoint import read_container

        if not Path(args.resume).is_file():
            raise ConfigError(f"checkpoint {args.resume} not found")
        saved = config_mod.loads(read_container(args.resume)[0])
        if config_mod.config_hash(saved) != config_mod.config_hash(cfg):
            diff = ", ".join(config_mod.config_diff(saved, cfg))
            raise ConfigError(f"resume config mismatch (hash differs on {diff})")
    if cfg.data_source != "synthetic" and not Path(cfg.data_root).exists():
        raise ConfigError(f"data_root {cfg.data_root} does not exist")
    out = output_dir("pretrain")
    _echo(cfg, out)
    run = train_loop(cfg, None, out, resume=args.resume)
    print(f"final checkpoint: {run.checkpoint}")
    print(f"metrics: {run.metrics}")


def cmd_probe(args):
    from .checkpoint import load_checkpoint
    from .evaluate import linear_probe, probe_config_from

    if not Path(args.ckpt).is_file():
        raise ConfigError(f"checkpoint {args.ckpt} not found")
    model, cfg, _ = load_checkpoint(args.ckpt)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    spec = data_spec(args.data, cfg.encoder.image_size, cfg.seed)
    out = output_dir("probe")
    _echo(cfg, out)
    res = linear_probe(model, spec, probe_config_from(cfg), config_id=Path(args.ckpt).name)
    (out / "probe.csv").write_text(f"config_id,accuracy,n_eval,seed\n{res.config_id},{res.accuracy!r},{res.n_eval},{res.seed}\n")
    print(f"accuracy {res.accuracy:.4f} on {res.n_eval} held-out images")


def cmd_ablate(args):
    from .evaluate import run_ablation

    cfg = _load_config(args.config, args.seed)
    out = output_dir("ablate")
    _echo(cfg, out)
    report = run_ablation(cfg, None, out)
    print(report.table(), end="")
    print(f"report: {out / 'ablation.csv'}")


def cmd_mask_sweep(args):
    from .evaluate import masking_ratio_probe, sweep_plan

    cfg = _load_config(args.config, args.seed)
    try:
        ratios = [float(r) for r in _split_list(args.ratios)]
    except ValueError:
        raise ConfigError(f"ratios must be numbers, got {args.ratios}") from None
    strategies = _split_list(args.strategies)
    steps = args.steps if args.steps is not None else cfg.total_steps
    plan = sweep_plan(ratios, strategies)
    for strategy, ratio in plan:
        replace(cfg, mask_strategy=strategy, mask_ratio=ratio, total_steps=steps).validate()
    out = output_dir("mask-sweep")
    _echo(cfg, out)
    rows = masking_ratio_probe(cfg, None, ratios, strategies, out, pretrain_steps=steps)
    print(f"{len(rows)} runs; results in {out / 'mask_sweep.csv'}")


def cmd_viz(args):
    from .checkpoint import load_checkpoint
    from .viz import render_reconstructions

    if not Path(args.ckpt).is_file():
        raise ConfigError(f"checkpoint {args.ckpt} not found")
    model, cfg, _ = load_checkpoint(args.ckpt)
    spec = data_spec(args.images, cfg.encoder.image_size, cfg.seed)
    images = load_dataset(spec).images[: args.count]
    out = output_dir("viz")
    _echo(cfg, out)
    for path in render_reconstructions(model, images, out_dir=out):
        print(path)


def parse_grid(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--grid must look like HxW, got {text!r}") from None
    return h, w


def cmd_mask_show(args):
    h, w = parse_grid(args.grid)
    print(checkerboard_mask(h, w, args.cell, args.phase).to_text(), end="")


COMMANDS = {
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "ablate": cmd_ablate,
    "mask-sweep": cmd_mask_sweep,
    "viz": cmd_viz,
    "mask-show": cmd_mask_show,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    torch.set_num_threads(1)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"symmim {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("symmim %s failed", args.command)
        print(f"symmim {args.command}: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
