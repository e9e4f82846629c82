import math
from dataclasses import replace

import pytest
import torch

from symmim.data import DatasetSpec, load_dataset
from symmim.errors import ConfigError
from symmim.evaluate import (
    AblationReport,
    ProbeConfig,
    SweepRow,
    extract_features,
    linear_probe,
    masking_ratio_probe,
    read_sweep_csv,
    run_ablation,
    sweep_plan,
    write_sweep_csv,
)
from symmim.losses import ABLATION_ROWS
from symmim.model import build_model, param_hash
from symmim.patching import patchify


def synthetic(n=64, size=8, seed=0):
    return DatasetSpec("synthetic", "", size, n, seed)


def raw_pixels(images):
    return images.reshape(images.shape[0], -1)


def test_raw_pixel_probe_separates_synthetic_classes():
    # the constructed set is linearly separable in pixel space
    res = linear_probe(None, synthetic(128), ProbeConfig(steps=200), featurizer=raw_pixels)
    assert res.accuracy >= 0.95


def test_random_label_control_near_chance():
    res = linear_probe(None, synthetic(256), ProbeConfig(steps=200, shuffle_labels=True), featurizer=raw_pixels)
    sigma = math.sqrt(0.25 / res.n_eval)
    assert abs(res.accuracy - 0.5) <= 3 * sigma


def test_probe_is_deterministic_and_leaves_backbone_alone(tiny_cfg):
    model = build_model(tiny_cfg)
    before = param_hash(model)
    a = linear_probe(model, synthetic(), ProbeConfig(steps=30), "a")
    b = linear_probe(model, synthetic(), ProbeConfig(steps=30), "a")
    assert a == b
    assert 0.0 <= a.accuracy <= 1.0 and a.n_eval == 16
    assert param_hash(model) == before


def test_probe_class_count_mismatch(tiny_cfg):
    with pytest.raises(ConfigError, match="classes"):
        linear_probe(build_model(tiny_cfg), synthetic(), ProbeConfig(steps=5, num_classes=1))


def test_features_are_mean_pooled(tiny_cfg):
    model = build_model(tiny_cfg)
    imgs = load_dataset(synthetic(4)).images
    feats = extract_features(model, imgs)
    assert feats.shape == (4, tiny_cfg.encoder.dim)
    with torch.no_grad():
        ref = model.features(patchify(imgs, 2)).mean(1).double()
    assert torch.equal(feats, ref)


def test_ablation_rows_and_audit(tiny_cfg, tmp_path):
    cfg = replace(tiny_cfg, total_steps=2, probe_steps=5)
    report = run_ablation(cfg, synthetic(32), tmp_path)
    assert [flags for flags, _ in report.rows] == list(ABLATION_ROWS)
    diffs = report.audit()
    assert diffs[0] == [] and all(d == ["loss_flags"] for d in diffs[1:])
    assert len({(c.seed, c.total_steps) for c in report.configs}) == 1
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == "rec1,rec2,con,accuracy,n_eval,seed"
    assert [l.split(",")[:3] for l in lines[1:]] == [["1", "0", "0"], ["1", "1", "0"], ["1", "0", "1"], ["1", "1", "1"]]
    assert "81.7" in (tmp_path / "ablation.txt").read_text()


def test_audit_rejects_extra_differences(tiny_cfg):
    report = AblationReport([], [tiny_cfg, replace(tiny_cfg, seed=5)])
    with pytest.raises(AssertionError, match="seed"):
        report.audit()


@pytest.mark.parametrize("ratios,strategies,expected", [
    ([0.3, 0.6], ["checkerboard"], 1),
    ([0.5, 0.75, 0.95], ["random"], 3),
    ([0.5, 0.75, 0.95], ["random", "checkerboard"], 4),
    ([0.25, 0.5], ["block", "central", "checkerboard"], 5),
])
def test_sweep_cardinality(ratios, strategies, expected):
    plan = sweep_plan(ratios, strategies)
    assert len(plan) == expected
    assert all(r == 0.5 for s, r in plan if s == "checkerboard")


@pytest.mark.parametrize("ratios,strategies", [([0.0], ["random"]), ([1.0], ["random"]), ([0.5], ["spiral"])])
def test_sweep_rejects_bad_input(ratios, strategies):
    with pytest.raises(ConfigError):
        sweep_plan(ratios, strategies)


def test_sweep_csv_round_trip(tmp_path):
    rows = [SweepRow("random", 0.1 + 0.2, 1 / 3, 300, 7), SweepRow("checkerboard", 0.5, 0.96875, 300, 7)]
    write_sweep_csv(tmp_path / "s.csv", rows)
    assert read_sweep_csv(tmp_path / "s.csv") == rows
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "strategy,ratio,accuracy,steps,seed"


def test_masking_ratio_probe_runs(tiny_cfg, tmp_path):
    cfg = replace(tiny_cfg, probe_steps=5)
    rows = masking_ratio_probe(cfg, synthetic(32), [0.25, 0.5], ["random", "checkerboard"], tmp_path, pretrain_steps=1)
    assert [(r.strategy, r.ratio) for r in rows] == [("random", 0.25), ("random", 0.5), ("checkerboard", 0.5)]
    assert read_sweep_csv(tmp_path / "mask_sweep.csv") == rows
