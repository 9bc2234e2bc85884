"""Trajectory-shared node re-embedding.

All node embeddings attend, as queries, over the node embeddings plus every
trajectory's current context. One refined node matrix is produced per
instance and shared by all of its trajectories; it replaces the previous one
for the next decoding step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .layers import FeedForward, attention, check_finite, rms_norm


@dataclass
class DistanceBias:
    node_node: torch.Tensor  # (B, M, M)
    context_node: torch.Tensor  # (B, P, M); row p is the node_node row of trajectory p's current node
    positions: torch.Tensor  # (B, P) current node of each trajectory

    def matrix(self) -> torch.Tensor:
        """Cross-attention bias, ``(B, M, M + P)``: node queries against node then context keys."""
        return torch.cat([self.node_node, self.context_node.transpose(-1, -2)], dim=-1)

    def self_attention_matrix(self) -> torch.Tensor:
        """Bias over the unified node+context sequence, ``(B, M+P, M+P)``."""
        cn = self.context_node
        B, P, _ = cn.shape
        cc = cn.gather(2, self.positions[:, None, :].expand(B, P, P))
        bottom = torch.cat([cn, cc], dim=-1)
        return torch.cat([self.matrix(), bottom], dim=-2)


def distance_bias(dist: torch.Tensor, current_nodes: torch.Tensor) -> DistanceBias:
    """Bias blocks from a ``(B, M, M)`` distance matrix and ``(B, P)`` current nodes."""
    B, P = current_nodes.shape
    M = dist.shape[-1]
    ctx = dist.gather(1, current_nodes[..., None].expand(B, P, M))
    return DistanceBias(node_node=dist, context_node=ctx, positions=current_nodes)


class TSNR(nn.Module):
    def __init__(self, dim: int = 128, heads: int = 8, self_attention: bool = False):
        super().__init__()
        self.heads = heads
        self.self_attention = self_attention
        self.norm_q = rms_norm(dim)
        self.norm_kv = rms_norm(dim)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.norm_mlp = rms_norm(dim)
        self.mlp = FeedForward(dim, 4 * dim)
        self.weights_per_step = 0
        self.last_weights: torch.Tensor | None = None

    def forward(self, h_prev: torch.Tensor, contexts: torch.Tensor, bias: DistanceBias) -> torch.Tensor:
        dtype = h_prev.dtype
        M = h_prev.shape[-2]
        joint = self.norm_kv(torch.cat([h_prev, contexts], dim=-2))
        k, v = self.k(joint), self.v(joint)
        if self.self_attention:
            q = self.q(self.norm_q(torch.cat([h_prev, contexts], dim=-2)))
            b = bias.self_attention_matrix().to(dtype)
        else:
            q = self.q(self.norm_q(h_prev))
            b = bias.matrix().to(dtype)
        out, weights = attention(q, k, v, self.heads, bias=b, return_weights=True)
        self.weights_per_step = weights.shape[-2] * weights.shape[-1]
        self.last_weights = weights.detach()
        h = (q + out)[..., :M, :]
        h = h + self.mlp(self.norm_mlp(h))
        return check_finite(h, "node re-embedding")


def gate_update(u: float, mode: str, p_train: float, p_test: float) -> bool:
    """Whether re-embedding runs this step, given a uniform draw ``u`` in [0, 1)."""
    for p in (p_train, p_test):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"refinement probability {p} outside [0, 1]")
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    return u < (p_train if mode == "train" else p_test)
