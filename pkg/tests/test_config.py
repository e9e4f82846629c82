from dataclasses import replace

import pytest

from symmim import config as cm
from symmim.config import EncoderConfig, RunConfig, full_scale_config
from symmim.errors import ConfigError


def test_round_trip():
    cfg = replace(RunConfig(), lambda_=0.5, loss_flags=("rec1", "con"), tau=0.07)
    assert cm.loads(cm.dumps(cfg)) == cfg
    assert "lambda = 0.5" in cm.dumps(cfg)
    assert "encoder.depth = 4" in cm.dumps(cfg)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        cm.loads("bogus = 1\n")
    with pytest.raises(ConfigError, match="unknown"):
        cm.loads("encoder.bogus = 1\n")


def test_partial_file_uses_defaults():
    cfg = cm.loads("# comment\nsmall_cell = 1\nencoder.depth = 2  # inline\n")
    assert cfg.encoder.depth == 2 and cfg.large_cell == 2


@pytest.mark.parametrize("text,needle", [
    ("small_cell = 2\nlarge_cell = 2\n", "small_cell < large_cell"),
    ("large_cell = 3\n", "large_cell=3"),
    ("tau = 0\n", "tau"),
    ("loss_flags = rec2,con\n", "rec1"),
    ("encoder.heads = 3\n", "heads"),
    ("mask_strategy = central\nmask_ratio = 0.001\n", "masks no tokens"),
])
def test_validation(text, needle):
    with pytest.raises(ConfigError, match=needle):
        cm.loads(text).validate()


def test_defaults_valid_and_desk_scale():
    cfg = RunConfig().validate()
    assert (cfg.encoder.depth, cfg.encoder.dim, cfg.encoder.image_size, cfg.encoder.grid) == (4, 64, 32, 8)
    assert (cfg.tau, cfg.lambda_, cfg.m_base) == (0.1, 1.0, 0.996)


def test_full_scale_profile():
    cfg = full_scale_config().validate()
    assert cfg.heads.proj_hidden == 4096 and cfg.heads.proj_out == 256 and cfg.heads.proj_layers == 3
    assert cfg.encoder.patch_size == 16 and cfg.encoder.image_size == 224
    # 16 px and 32 px mask cells in 16 px token units
    assert (cfg.small_cell, cfg.large_cell) == (1, 2)


def test_hash_ignores_resumable_fields():
    a = RunConfig()
    assert cm.config_hash(a) == cm.config_hash(replace(a, total_steps=999, checkpoint_every=5))
    assert cm.config_hash(a) != cm.config_hash(replace(a, seed=1))
    assert cm.config_diff(a, replace(a, seed=1, encoder=EncoderConfig(depth=2))) == ["encoder.depth", "seed"]
