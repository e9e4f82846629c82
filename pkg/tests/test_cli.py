import subprocess
import sys
from dataclasses import replace

import pytest

from symmim import config as config_mod
from symmim.cli import main
from symmim.evaluate import read_sweep_csv
from symmim.train import read_metrics

MASK_4x4 = "4 4 checkerboard 1 even 0.5 -1\n1010\n0101\n1010\n0101\n"


def write_cfg(path, cfg):
    config_mod.save(cfg, path)
    return str(path)


def run_dirs(out_dir):
    root = out_dir / "runs"
    return sorted(root.iterdir()) if root.exists() else []


def test_mask_show(capsys):
    assert main(["mask-show", "--grid", "4x4", "--cell", "1", "--phase", "even"]) == 0
    out = capsys.readouterr().out
    assert out == MASK_4x4 and "".join(out.splitlines()[1:]).count("1") == 8


def test_mask_show_bad_geometry(capsys):
    assert main(["mask-show", "--grid", "6x4", "--cell", "4"]) == 1
    assert "grid_h" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "symmim.cli", "mask-show", "--grid", "4x4", "--cell", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == MASK_4x4


@pytest.mark.parametrize("argv", [["frobnicate"], ["mask-show", "--grid", "4x4", "--cell", "1", "--bogus"], []])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert "usage:" in capsys.readouterr().err


def test_bad_config_exits_1_without_writing(tiny_cfg, out_dir, capsys):
    path = out_dir / "bad.cfg"
    path.write_text(config_mod.dumps(tiny_cfg).replace("large_cell = 2", "large_cell = 1"))
    assert main(["pretrain", "--config", str(path)]) == 1
    assert "small_cell < large_cell" in capsys.readouterr().err
    assert run_dirs(out_dir) == []


def test_unknown_config_key_exits_1(tiny_cfg, out_dir):
    path = out_dir / "bad.cfg"
    path.write_text(config_mod.dumps(tiny_cfg) + "temperature = 3\n")
    assert main(["ablate", "--config", str(path)]) == 1
    assert run_dirs(out_dir) == []


def test_missing_files_exit_1(out_dir):
    assert main(["pretrain", "--config", str(out_dir / "nope.cfg")]) == 1
    assert main(["probe", "--ckpt", str(out_dir / "nope.bin"), "--data", "synthetic"]) == 1
    assert run_dirs(out_dir) == []


def test_resume_mismatch_exits_1_without_writing(tiny_cfg, out_dir, capsys):
    path = write_cfg(out_dir / "a.cfg", replace(tiny_cfg, total_steps=1))
    assert main(["pretrain", "--config", path]) == 0
    ckpt = run_dirs(out_dir)[0] / "final.bin"
    other = write_cfg(out_dir / "b.cfg", replace(tiny_cfg, tau=0.5))
    assert main(["pretrain", "--config", other, "--resume", str(ckpt)]) == 1
    assert "tau" in capsys.readouterr().err
    assert len(run_dirs(out_dir)) == 1


def test_pretrain_seed_override_and_echo(tiny_cfg, out_dir):
    path = write_cfg(out_dir / "c.cfg", replace(tiny_cfg, total_steps=2, seed=3))
    assert main(["pretrain", "--config", path, "--seed", "11"]) == 0
    (run,) = run_dirs(out_dir)
    echoed = config_mod.load(run / "config.txt")
    assert echoed.seed == 11 and echoed == replace(tiny_cfg, total_steps=2, seed=11)
    assert [r["step"] for r in read_metrics(run / "metrics.csv")] == ["1", "2"]
    assert (run / "final.bin").exists()


def test_probe_and_viz_commands(tiny_cfg, out_dir, capsys):
    path = write_cfg(out_dir / "c.cfg", replace(tiny_cfg, total_steps=1, probe_steps=5))
    assert main(["pretrain", "--config", path]) == 0
    ckpt = str(run_dirs(out_dir)[0] / "final.bin")
    assert main(["probe", "--ckpt", ckpt, "--data", "synthetic:32"]) == 0
    assert "accuracy" in capsys.readouterr().out
    assert main(["viz", "--ckpt", ckpt, "--images", "synthetic:8", "--count", "2"]) == 0
    viz = [d for d in run_dirs(out_dir) if d.name.startswith("viz-")][0]
    assert len(list(viz.glob("recon_*.ppm"))) == 4 and (viz / "config.txt").exists()
    probe = [d for d in run_dirs(out_dir) if d.name.startswith("probe-")][0]
    assert (probe / "probe.csv").read_text().startswith("config_id,accuracy,n_eval,seed\n")


def test_mask_sweep_validates_before_writing(tiny_cfg, out_dir):
    path = write_cfg(out_dir / "c.cfg", tiny_cfg)
    assert main(["mask-sweep", "--config", path, "--ratios", "0.5", "1.5", "--strategies", "random"]) == 1
    assert main(["mask-sweep", "--config", path, "--ratios", "0.5", "--strategies", "spiral"]) == 1
    assert run_dirs(out_dir) == []


def test_mask_sweep_accepts_comma_lists(tiny_cfg, out_dir):
    path = write_cfg(out_dir / "c.cfg", replace(tiny_cfg, probe_steps=5, data_limit=16))
    assert main(["mask-sweep", "--config", path, "--ratios", "0.25,0.5", "--strategies", "checkerboard",
                 "--steps", "1"]) == 0
    (run,) = run_dirs(out_dir)
    rows = read_sweep_csv(run / "mask_sweep.csv")
    assert [(r.strategy, r.ratio, r.steps) for r in rows] == [("checkerboard", 0.5, 1)]
