from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .instances import HORIZON_INF

RMS_EPS = 1e-6


class NumericFailure(FloatingPointError):
    """A network output became non-finite."""


def check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise NumericFailure(f"non-finite values in {where}")
    return x


def rms_norm(dim: int) -> nn.RMSNorm:
    return nn.RMSNorm(dim, eps=RMS_EPS)


def strip_padding(x: torch.Tensor) -> torch.Tensor:
    """Replace horizon padding (absent late times / limits) by 0 for network inputs."""
    return torch.where(x >= HORIZON_INF / 2, torch.zeros_like(x), x)


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, n, d = x.shape
    return x.reshape(*lead, n, heads, d // heads).transpose(-3, -2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    *lead, h, n, d = x.shape
    return x.transpose(-3, -2).reshape(*lead, n, h * d)


def attention(q, k, v, heads: int, bias=None, mask=None, topk: int | None = None, return_weights=False):
    """Multi-head scaled dot-product attention.

    ``bias`` (broadcast to every head) is added to the scaled scores; ``mask``
    is True for admissible keys. ``topk`` keeps only the k best-scoring keys
    per query.
    """
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(qh.shape[-1])
    if bias is not None:
        scores = scores + bias.unsqueeze(-3)
    if mask is not None:
        scores = scores.masked_fill(~mask.unsqueeze(-3), float("-inf"))
    if topk is not None and topk < scores.shape[-1]:
        kth = scores.topk(topk, dim=-1).values[..., -1:]
        scores = scores.masked_fill(scores < kth, float("-inf"))
    weights = F.softmax(scores, dim=-1)
    out = merge_heads(weights @ vh)
    return (out, weights) if return_weights else out


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, hidden: int):
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
