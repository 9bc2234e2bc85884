"""Dual-branch transformer encoder producing the initial node embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .instances import Instance
from .layers import FeedForward, attention, check_finite, rms_norm, strip_padding


@dataclass
class NodeFeatures:
    depot: torch.Tensor  # (B, n_depots, 4): x, y, open flag, duration-limit flag
    customer: torch.Tensor  # (B, N, 7): x, y, linehaul, backhaul, early, late, service
    flags: torch.Tensor  # (B, 4): B, O, L, TW

    @property
    def n_customers(self) -> int:
        return self.customer.shape[1]


def node_features(instances: list[Instance] | Instance, dtype=torch.float32, device="cpu") -> NodeFeatures:
    if isinstance(instances, Instance):
        instances = [instances]
    depot, customer, flags = [], [], []
    for inst in instances:
        v = inst.variant
        d = np.zeros((inst.n_depots, 4))
        d[:, :2] = inst.depot_coords
        d[:, 2] = float(v.open)
        d[:, 3] = float(v.duration_limited)
        depot.append(d)
        customer.append(
            np.column_stack(
                [
                    inst.customer_coords,
                    inst.linehaul_demand,
                    inst.backhaul_demand,
                    inst.tw_early,
                    inst.tw_late,
                    inst.tw_service,
                ]
            ).reshape(inst.n_customers, 7)
        )
        flags.append(v.constraint_flags())
    kw = dict(dtype=dtype, device=device)
    return NodeFeatures(
        depot=torch.tensor(np.stack(depot), **kw),
        customer=strip_padding(torch.tensor(np.stack(customer), dtype=torch.float64, device=device)).to(dtype),
        flags=torch.tensor(flags, **kw),
    )


class TransformerLayer(nn.Module):
    """Pre-norm transformer block; ``sparse`` switches to top-k attention."""

    def __init__(self, dim: int, heads: int, hidden: int, sparse: bool = False, topk: int | None = None):
        super().__init__()
        self.heads, self.sparse, self.topk = heads, sparse, topk
        self.norm_attn = rms_norm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm_ff = rms_norm(dim)
        self.ff = FeedForward(dim, hidden)

    def forward(self, x: torch.Tensor, n_customers: int) -> torch.Tensor:
        q, k, v = self.qkv(self.norm_attn(x)).chunk(3, dim=-1)
        topk = None
        if self.sparse:
            topk = self.topk or max(1, math.ceil(n_customers / 2))
        x = x + self.proj(attention(q, k, v, self.heads, topk=topk))
        return x + self.ff(self.norm_ff(x))


class DualBranchLayer(nn.Module):
    def __init__(self, dim: int, heads: int, hidden: int, topk: int | None = None):
        super().__init__()
        self.global_block = TransformerLayer(dim, heads, hidden)
        self.sparse_block = TransformerLayer(dim, heads, hidden, sparse=True, topk=topk)
        self.fuse_global = nn.Linear(dim, dim)
        self.fuse_sparse = nn.Linear(dim, dim)

    def forward(self, unified, nodes, n_customers: int, single_branch: bool = False):
        g = self.global_block(unified, n_customers)
        s = nodes if single_branch else self.sparse_block(nodes, n_customers)
        return g + self.fuse_global(s), s + self.fuse_sparse(g)


class Encoder(nn.Module):
    def __init__(
        self,
        dim: int = 128,
        heads: int = 8,
        hidden: int = 512,
        layers: int = 6,
        topk: int | None = None,
        single_branch: bool = False,
    ):
        super().__init__()
        self.dim = dim
        self.single_branch = single_branch
        self.depot_proj = nn.Linear(4, dim)
        self.customer_proj = nn.Linear(7, dim)
        self.label_proj = nn.Linear(4, dim)
        self.fuse = nn.Linear(2 * dim, dim)
        self.layers = nn.ModuleList(DualBranchLayer(dim, heads, hidden, topk) for _ in range(layers))
        self.norm = rms_norm(dim)

    def embed_inputs(self, feats: NodeFeatures) -> tuple[torch.Tensor, torch.Tensor]:
        """Node inputs ``I`` and constraint-aware unified inputs, both ``(B, M, dim)``."""
        nodes = torch.cat([self.depot_proj(feats.depot), self.customer_proj(feats.customer)], dim=1)
        label = self.label_proj(feats.flags)[:, None, :].expand_as(nodes)
        return nodes, self.fuse(torch.cat([nodes, label], dim=-1))

    def encode(self, inputs: tuple[torch.Tensor, torch.Tensor], n_customers: int) -> torch.Tensor:
        nodes, unified = inputs
        for i, layer in enumerate(self.layers):
            unified, nodes = layer(unified, nodes, n_customers, self.single_branch)
            check_finite(unified, f"encoder layer {i}")
            check_finite(nodes, f"encoder layer {i} (sparse branch)")
        return self.norm(unified)

    def forward(self, feats: NodeFeatures) -> torch.Tensor:
        return self.encode(self.embed_inputs(feats), feats.n_customers)
