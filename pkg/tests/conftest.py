import pytest
import torch

from symmim.config import EncoderConfig, HeadsConfig, RunConfig

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


@pytest.fixture
def tiny_cfg():
    """A ~1.7k-parameter model on 8x8 images (4x4 token grid)."""
    return RunConfig(
        encoder=EncoderConfig(depth=1, dim=8, heads=2, mlp_ratio=2.0, patch_size=2, image_size=8),
        heads=HeadsConfig(proj_hidden=16, proj_out=8, pred_hidden=16, pred_out=8),
        small_cell=1,
        large_cell=2,
        batch_size=4,
        total_steps=4,
        warmup_steps=1,
        data_limit=16,
        probe_steps=50,
    )


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("SYMMIM_OUT", str(tmp_path / "runs"))
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
