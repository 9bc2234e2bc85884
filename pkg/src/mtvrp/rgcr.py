"""Relevance-guided context construction.

Each trajectory's constraint state is split into four attribute groups
(capacity/backhaul, duration limit, open route, time windows). Each group is
embedded separately, scored against the current node embedding by a raw dot
product, and the score-weighted sum is added to a learned mix of all four
before being fused with the node embedding into the step context.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .env import EnvState, VRPEnv
from .layers import strip_padding

GROUPS = ("b", "l", "o", "tw")


@dataclass
class ConstraintAttributes:
    capacity: torch.Tensor  # (B, P, 3): linehaul, backhaul of current node; remaining capacity
    duration: torch.Tensor  # (B, P, 3): x, y of current node; remaining sub-route length
    open_route: torch.Tensor  # (B, P, 3): x, y of current node; total distance so far
    time: torch.Tensor  # (B, P, 4): early, late, service of current node; current time

    def groups(self) -> tuple[torch.Tensor, ...]:
        return self.capacity, self.duration, self.open_route, self.time


def constraint_attributes(env: VRPEnv, state: EnvState) -> ConstraintAttributes:
    cur = state.current_node
    bidx = torch.arange(env.batch_size, device=env.device)[:, None]
    xy = env.coords[bidx, cur]
    return ConstraintAttributes(
        capacity=torch.stack([env.linehaul[bidx, cur], env.backhaul[bidx, cur], env.remaining_capacity(state)], -1),
        duration=torch.cat([xy, env.remaining_distance(state)[..., None]], -1),
        open_route=torch.cat([xy, state.total_distance[..., None]], -1),
        time=torch.stack([env.early[bidx, cur], env.late[bidx, cur], env.service[bidx, cur], state.current_time], -1),
    )


class RGCR(nn.Module):
    def __init__(self, dim: int = 128, score_mode: str = "dot"):
        super().__init__()
        self.b = nn.Linear(3, dim)
        self.l = nn.Linear(3, dim)  # noqa: E741
        self.o = nn.Linear(3, dim)
        self.tw = nn.Linear(4, dim)
        self.concat = nn.Linear(4 * dim, dim)
        self.out = nn.Linear(2 * dim, dim)
        # "cosine" and "random" exist only for ablation harnesses
        self.score_mode = score_mode

    def constraint_embeddings(self, attrs: ConstraintAttributes) -> tuple[torch.Tensor, ...]:
        dtype = self.b.weight.dtype
        return tuple(
            getattr(self, name)(strip_padding(a).to(dtype)) for name, a in zip(GROUPS, attrs.groups())
        )

    def scores(self, embeddings: tuple[torch.Tensor, ...], h_cur: torch.Tensor) -> torch.Tensor:
        stacked = torch.stack(embeddings, dim=-2)  # (B, P, 4, D)
        if self.score_mode == "dot":
            return (stacked * h_cur[..., None, :]).sum(-1)
        if self.score_mode == "cosine":
            return F.cosine_similarity(stacked, h_cur[..., None, :], dim=-1)
        if self.score_mode == "random":
            return torch.rand(stacked.shape[:-1], dtype=stacked.dtype, device=stacked.device)
        raise ValueError(f"unknown score mode {self.score_mode!r}")

    def reformulate_context(self, embeddings: tuple[torch.Tensor, ...], h_cur: torch.Tensor) -> torch.Tensor:
        s = self.scores(embeddings, h_cur)
        mixed = self.concat(torch.cat(embeddings, dim=-1))
        weighted = (s[..., None] * torch.stack(embeddings, dim=-2)).sum(-2)
        return self.out(torch.cat([mixed + weighted, h_cur], dim=-1))

    def forward(self, attrs: ConstraintAttributes, h_cur: torch.Tensor) -> torch.Tensor:
        return self.reformulate_context(self.constraint_embeddings(attrs), h_cur)
