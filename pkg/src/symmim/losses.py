"""Training objectives: masked L1 reconstruction, cross-branch reconstruction,
per-token InfoNCE with stop-gradient keys, and their weighted sum."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .config import KEY_SCOPES, LOSS_TERMS
from .patching import as_token_mask

log = logging.getLogger(__name__)

# Rows of the loss-term ablation, in table order.
ABLATION_ROWS = (
    ("rec1",),
    ("rec1", "rec2"),
    ("rec1", "con"),
    ("rec1", "rec2", "con"),
)


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.1
    key_scope: str = "same_image"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.key_scope not in KEY_SCOPES:
            raise ValueError(f"key_scope must be one of {KEY_SCOPES}")


@dataclass
class LossBreakdown:
    """Loss terms of one step. Fields are 0-dim tensors until :meth:`item` is called."""

    rec1: torch.Tensor
    rec2: torch.Tensor
    con: torch.Tensor
    lambda_: float
    total: torch.Tensor
    rec2_empty: bool = False

    def item(self) -> dict:
        return {
            "rec1": float(self.rec1.detach()),
            "rec2": float(self.rec2.detach()),
            "con": float(self.con.detach()),
            "lambda": self.lambda_,
            "total": float(self.total.detach()),
        }


def _masked_l1(a: torch.Tensor, b: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    w = m.to(a.dtype).unsqueeze(-1)
    return ((a - b).abs() * w).sum() / (w.sum() * a.shape[-1])


def loss_rec1(pred: torch.Tensor, target: torch.Tensor, mask) -> torch.Tensor:
    """Mean absolute pixel error over the tokens in ``mask``; visible tokens are ignored."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    n, t, _ = pred.shape
    m = as_token_mask(mask, n, t, pred.device)
    if not m.any():
        raise ValueError("rec1 mask is empty; nothing to reconstruct")
    return _masked_l1(pred, target, m)


def loss_rec2(online: torch.Tensor, momentum: torch.Tensor, m1, m2) -> tuple[torch.Tensor, bool]:
    """Mean absolute error between online and (detached) momentum reconstructions on M1 & M2.

    Returns ``(loss, empty)``; when the intersection is empty the loss is 0 and
    ``empty`` is True.
    """
    if online.shape != momentum.shape:
        raise ValueError(f"shape mismatch: {tuple(online.shape)} vs {tuple(momentum.shape)}")
    n, t, _ = online.shape
    a = as_token_mask(m1, n, t, online.device)
    b = as_token_mask(m2, n, t, online.device)
    both = a & b
    if not both.any():
        log.warning("M1 and M2 do not intersect; rec2 set to 0")
        return online.sum() * 0.0, True
    return _masked_l1(online, momentum.detach(), both), False


def info_nce(queries: torch.Tensor, keys: torch.Tensor, positives: torch.Tensor, tau: float) -> torch.Tensor:
    """Cross-entropy of each query's positive key among all keys, with cosine logits / tau.

    ``queries`` is (Q, d), ``keys`` is (K, d) and ``positives`` holds, for each
    query, the index of its positive key. Keys are detached.
    """
    if queries.ndim != 2 or keys.ndim != 2 or queries.shape[1] != keys.shape[1]:
        raise ValueError(f"incompatible shapes {tuple(queries.shape)} and {tuple(keys.shape)}")
    if keys.shape[0] < 2:
        raise ValueError("InfoNCE needs at least 2 keys")
    keys = keys.detach()
    if (queries.norm(dim=1) == 0).any() or (keys.norm(dim=1) == 0).any():
        raise ValueError("zero-norm embedding; cosine similarity undefined")
    q = F.normalize(queries, dim=1)
    k = F.normalize(keys, dim=1)
    logits = q @ k.T / tau
    return F.cross_entropy(logits, positives.long())


def token_info_nce(queries: torch.Tensor, keys: torch.Tensor, mask, cfg: ContrastiveConfig) -> torch.Tensor:
    """InfoNCE over token embeddings (n, t, d), one query per masked token of ``mask``.

    The positive of query (i, j) is key (i, j). With ``same_image`` scope the
    candidates are the t keys of image i; with ``batch`` scope all n*t keys.
    """
    if queries.shape != keys.shape:
        raise ValueError(f"shape mismatch: {tuple(queries.shape)} vs {tuple(keys.shape)}")
    n, t, d = queries.shape
    m = as_token_mask(mask, n, t, queries.device)
    keys = keys.detach()
    if cfg.key_scope == "batch":
        idx = torch.arange(n * t, device=queries.device).reshape(n, t)
        return info_nce(queries[m], keys.reshape(n * t, d), idx[m], cfg.tau)

    if t < 2:
        raise ValueError("InfoNCE needs at least 2 keys")
    if (queries[m].norm(dim=-1) == 0).any() or (keys.norm(dim=-1) == 0).any():
        raise ValueError("zero-norm embedding; cosine similarity undefined")
    q = F.normalize(queries, dim=-1)
    k = F.normalize(keys, dim=-1)
    logits = torch.einsum("nid,njd->nij", q, k) / cfg.tau
    logp = logits.log_softmax(dim=-1).diagonal(dim1=1, dim2=2)
    return -logp[m].mean()


def total_loss(rec1, rec2, con, lambda_: float = 1.0, flags=LOSS_TERMS, rec2_empty: bool = False) -> LossBreakdown:
    """total = rec1 + rec2 + lambda * con, with inactive terms reported as 0."""
    ref = rec1 if torch.is_tensor(rec1) else torch.tensor(float(rec1), dtype=torch.float64)

    def term(name, value):
        if name not in flags or value is None:
            return torch.zeros((), dtype=ref.dtype, device=ref.device)
        return value if torch.is_tensor(value) else torch.tensor(float(value), dtype=ref.dtype)

    r1, r2, c = term("rec1", rec1), term("rec2", rec2), term("con", con)
    total = r1 + r2 + lambda_ * c
    for name, value in (("rec1", r1), ("rec2", r2), ("con", c), ("total", total)):
        if not math.isfinite(float(value.detach())):
            raise FloatingPointError(f"non-finite {name} loss: {float(value.detach())}")
    return LossBreakdown(r1, r2, c, lambda_, total, rec2_empty)
