import math

import numpy as np
import pytest
import torch

from symmim.config import EncoderConfig, HeadsConfig
from symmim.model import MLPHead, SymMIM, ViTBackbone, build_model, ema_update, momentum_schedule, param_hash


def fd_grad(f, params, eps=1e-6):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. each tensor in ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = f().item()
                flat[i] = old - eps
                down = f().item()
                flat[i] = old
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def rel_err(a, b):
    a = torch.cat([x.reshape(-1) for x in a])
    b = torch.cat([x.reshape(-1) for x in b])
    return ((a - b).norm() / max(a.norm(), b.norm())).item()


@pytest.fixture
def model(tiny_cfg):
    return build_model(tiny_cfg).double()


def test_zero_residual_branches_are_identity(tiny_cfg):
    bb = ViTBackbone(tiny_cfg.encoder).double()
    with torch.no_grad():
        for blk in bb.blocks:
            for lin in (blk.attn.proj, blk.mlp[2]):
                lin.weight.zero_()
                lin.bias.zero_()
    x = torch.randn(2, 16, 8, dtype=torch.float64)
    out = x
    for blk in bb.blocks:
        out = blk(out)
    assert torch.equal(out, x)
    assert torch.allclose(bb.encode(x), bb.norm(x))


def test_encode_shape(model):
    x = torch.randn(3, 16, 8, dtype=torch.float64)
    assert model.online["backbone"].encode(x).shape == (3, 16, 8)
    with pytest.raises(ValueError):
        model.online["backbone"].encode(torch.randn(3, 15, 8, dtype=torch.float64))


def test_encode_permutation_equivariance(model):
    bb = model.online["backbone"]
    patches = torch.rand(2, 16, 12, dtype=torch.float64)
    tokens = bb.embed(patches)  # positional table already added
    perm = torch.randperm(16, generator=torch.Generator().manual_seed(3))
    out = bb.encode(tokens)
    out_perm = bb.encode(tokens[:, perm])
    assert torch.allclose(out_perm, out[:, perm], atol=1e-12)


def test_reconstruct_head():
    cfg = EncoderConfig(depth=0, dim=12, heads=2, patch_size=2, image_size=4)
    m = SymMIM(cfg, HeadsConfig(proj_hidden=8, proj_out=4, pred_hidden=8, pred_out=4)).double()
    head = m.online["reconstructor"]
    x = torch.randn(2, 4, 12, dtype=torch.float64)
    with torch.no_grad():
        head.weight.zero_()
        head.bias.zero_()
    assert (m.reconstruct(x) == 0).all()
    with torch.no_grad():
        head.weight.copy_(torch.eye(12))
    assert torch.equal(m.reconstruct(x), x)


def test_reconstruct_l1_gradient_matches_fd(model):
    torch.manual_seed(0)
    feats = torch.randn(2, 16, 8, dtype=torch.float64)
    target = torch.rand(2, 16, 12, dtype=torch.float64)
    head = model.online["reconstructor"]

    def f():
        return (model.reconstruct(feats) - target).abs().mean()

    head.zero_grad()
    f().backward()
    ad = [head.weight.grad, head.bias.grad]
    fd = fd_grad(f, [head.weight.data, head.bias.data])
    assert rel_err(ad, fd) <= 1e-4


def test_project_predict_shapes(model):
    x = torch.randn(2, 16, 8, dtype=torch.float64)
    z = model.project(x)
    assert z.shape == (2, 16, 8)
    assert model.predict(z).shape == (2, 16, 8)
    assert len([l for l in model.online["projector"].net if isinstance(l, torch.nn.Linear)]) == 3
    assert len([l for l in model.online["predictor"].net if isinstance(l, torch.nn.Linear)]) == 2


def test_relu_zeroing_gives_output_bias():
    head = MLPHead(4, 6, 3, 3).double()
    with torch.no_grad():
        head.net[2].bias.fill_(-1e6)  # last hidden layer pre-activations all negative
    out = head(torch.randn(5, 4, dtype=torch.float64))
    assert torch.equal(out, head.net[-1].bias.expand(5, 3))


def test_project_predict_gradient_matches_fd(model):
    x = torch.randn(1, 16, 8, dtype=torch.float64)
    w = torch.randn(1, 16, 8, dtype=torch.float64)
    params = list(model.online["projector"].parameters()) + list(model.online["predictor"].parameters())

    def f():
        return (model.predict(model.project(x)) * w).sum()

    model.zero_grad()
    f().backward()
    ad = [p.grad.clone() for p in params]
    fd = fd_grad(f, [p.data for p in params])
    assert rel_err(ad, fd) <= 1e-4


def test_momentum_mirrors_online_subtree(model):
    model.check_momentum_structure()
    assert set(model.momentum.keys()) == {"backbone", "projector"}
    assert all(not p.requires_grad for p in model.momentum.parameters())
    # initialised as an exact copy
    for name in ("backbone", "projector"):
        for a, b in zip(model.online[name].parameters(), model.momentum[name].parameters()):
            assert torch.equal(a, b)


def _fill(module, value):
    with torch.no_grad():
        for p in module.parameters():
            p.fill_(value)


def test_ema_m0_copies(model):
    _fill(model.momentum, 3.0)
    ema_update(model, 0.0)
    for name in ("backbone", "projector"):
        for a, b in zip(model.online[name].parameters(), model.momentum[name].parameters()):
            assert torch.equal(a, b)
    assert model.step == 1


def test_ema_arithmetic(model):
    _fill(model.momentum, 1.0)
    _fill(model.online, 0.0)
    ema_update(model, 0.9)
    assert all((p == 0.9).all() for p in model.momentum.parameters())
    before = param_hash(model.online)
    ema_update(model, 1.0)
    assert all((p == 0.9).all() for p in model.momentum.parameters())
    assert param_hash(model.online) == before


@pytest.mark.parametrize("m", [0.0, 0.9, 0.996])
def test_ema_closed_form(model, m):
    torch.manual_seed(1)
    k0 = [p.detach().clone().normal_() for p in model.momentum.parameters()]
    with torch.no_grad():
        for p, v in zip(model.momentum.parameters(), k0):
            p.copy_(v)
    q = {n: [p.detach().clone() for p in model.online[n].parameters()] for n in ("backbone", "projector")}
    for _ in range(50):
        ema_update(model, m)
    qs = q["backbone"] + q["projector"]
    for p, a, b in zip(model.momentum.parameters(), k0, qs):
        expected = m ** 50 * a + (1 - m ** 50) * b
        assert torch.allclose(p, expected, atol=1e-10, rtol=0)


def test_momentum_schedule():
    assert momentum_schedule(0, 100, 0.996) == 0.996
    assert momentum_schedule(100, 100, 0.996) == 1.0
    assert math.isclose(momentum_schedule(50, 100, 0.996), 1 - (1 - 0.996) / 2, rel_tol=0, abs_tol=1e-15)
    vals = [momentum_schedule(s, 100, 0.99) for s in range(101)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_forward_is_deterministic(model):
    model.eval()
    x = torch.rand(2, 16, 12, dtype=torch.float64)
    assert torch.equal(model.features(x), model.features(x))
