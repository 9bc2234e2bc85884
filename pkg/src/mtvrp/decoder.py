"""Pointer decoder: context glimpse over node embeddings, tanh-clipped logits."""

from __future__ import annotations

import math

import torch
from torch import nn

from .env import ContractViolation
from .layers import attention


class Decoder(nn.Module):
    def __init__(self, dim: int = 128, heads: int = 8, clip: float = 10.0):
        super().__init__()
        if clip <= 0:
            raise ValueError("clip must be positive")
        self.heads, self.clip = heads, clip
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.glimpse = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim, bias=False)

    def precompute(self, nodes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return self.k(nodes), self.v(nodes), self.key(nodes)

    def logits(self, contexts, nodes, mask, cache=None) -> torch.Tensor:
        """Clipped logits ``(B, P, M)``; masked entries are ``-inf``."""
        if not bool(mask.any(-1).all()):
            raise ContractViolation("a decoder row has every node masked")
        k, v, key = cache if cache is not None else self.precompute(nodes)
        glimpse = self.glimpse(attention(contexts, k, v, self.heads, mask=mask))
        raw = glimpse @ key.transpose(-1, -2) / math.sqrt(glimpse.shape[-1])
        u = self.clip * torch.tanh(raw)
        return u.masked_fill(~mask, float("-inf"))

    def forward(self, contexts, nodes, mask, cache=None) -> torch.Tensor:
        """Log-probabilities over nodes for every trajectory."""
        return torch.log_softmax(self.logits(contexts, nodes, mask, cache), dim=-1)

    def step_probabilities(self, contexts, nodes, mask, cache=None) -> torch.Tensor:
        return self.forward(contexts, nodes, mask, cache).exp()


def select(log_probs: torch.Tensor, mode: str = "greedy", generator: torch.Generator | None = None):
    """Pick one node per row; returns ``(actions, log_prob_of_action)``.

    Greedy ties resolve to the lowest index.
    """
    if mode == "greedy":
        actions = log_probs.argmax(-1)
    elif mode == "sample":
        flat = log_probs.detach().exp().reshape(-1, log_probs.shape[-1])
        actions = torch.multinomial(flat, 1, generator=generator).reshape(log_probs.shape[:-1])
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return actions, log_probs.gather(-1, actions[..., None]).squeeze(-1)
