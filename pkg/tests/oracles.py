"""Independent reference computations used by the tests."""

import numpy as np
import torch


def info_nce_oracle(q, k, pos, tau):
    """Normalize, dot, log-sum-exp, NLL of the positive; plain numpy float64."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    losses = []
    for i in range(q.shape[0]):
        qi = q[i] / np.sqrt((q[i] ** 2).sum())
        logits = np.array([qi @ (kj / np.sqrt((kj ** 2).sum())) for kj in k]) / tau
        mx = logits.max()
        lse = mx + np.log(np.exp(logits - mx).sum())
        losses.append(lse - logits[pos[i]])
    return float(np.mean(losses))


def fd_gradient(f, params, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every element of ``params``."""
    out = []
    with torch.no_grad():
        for p in params:
            flat = p.data.view(-1)
            g = torch.zeros_like(flat)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = float(f())
                flat[i] = old - eps
                down = float(f())
                flat[i] = old
                g[i] = (up - down) / (2 * eps)
            out.append(g.view_as(p))
    return out


def relative_error(a, b):
    a = torch.cat([x.reshape(-1) for x in a])
    b = torch.cat([x.reshape(-1) for x in b])
    denom = max(a.norm().item(), b.norm().item())
    return (a - b).norm().item() / denom if denom else 0.0
