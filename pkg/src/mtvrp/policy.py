"""Encoder-decoder routing policy with step-wise context and node refinement."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .decoder import Decoder, select
from .encoder import Encoder, node_features
from .env import ContractViolation, EnvState, VRPEnv
from .rgcr import RGCR, constraint_attributes
from .tsnr import TSNR, distance_bias


@dataclass
class ModelConfig:
    dim: int = 128
    heads: int = 8
    hidden: int = 512
    encoder_layers: int = 6
    clip: float = 10.0
    sparse_topk: int | None = None
    single_branch: bool = False
    use_tsnr: bool = True
    tsnr_self_attention: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Rollout:
    actions: torch.Tensor  # (B, P, T), first column is the forced opening customer
    log_probs: torch.Tensor  # (B, P, T), zero for forced and padded steps
    state: EnvState
    env: VRPEnv
    refinements: int = 0

    @property
    def reward(self) -> torch.Tensor:
        """``(B, P)`` negative travelled length (float64)."""
        return -self.state.total_distance

    @property
    def sum_log_probs(self) -> torch.Tensor:
        return self.log_probs.sum(-1)

    def trajectories(self):
        return self.env.trajectories(self.actions, self.state, self.log_probs)


class RoutingPolicy(nn.Module):
    def __init__(self, config: ModelConfig | None = None, **overrides):
        super().__init__()
        config = config or ModelConfig()
        if overrides:
            config = ModelConfig(**{**config.to_dict(), **overrides})
        if config.dim % config.heads:
            raise ValueError("heads must divide dim")
        self.config = config
        c = config
        self.encoder = Encoder(c.dim, c.heads, c.hidden, c.encoder_layers, c.sparse_topk, c.single_branch)
        self.rgcr = RGCR(c.dim)
        self.tsnr = TSNR(c.dim, c.heads, c.tsnr_self_attention) if c.use_tsnr else None
        self.decoder = Decoder(c.dim, c.heads, c.clip)

    @property
    def dtype(self) -> torch.dtype:
        return self.decoder.k.weight.dtype

    def encode(self, env: VRPEnv) -> torch.Tensor:
        return self.encoder(node_features(env.instances, dtype=self.dtype, device=env.device))

    def forward(
        self,
        env: VRPEnv,
        mode: str = "greedy",
        p_refine: float = 1.0,
        n_trajectories: int | None = None,
        seed: int = 0,
        forced_actions: torch.Tensor | None = None,
        step_hook=None,
    ) -> Rollout:
        """Decode every instance of ``env`` with ``P`` parallel trajectories.

        ``mode`` is ``"greedy"`` or ``"sample"``; ``p_refine`` is the per-step
        probability of re-embedding the nodes. ``seed`` drives both the gate
        draws and action sampling (separate streams). ``forced_actions``
        replays a recorded ``(B, P, T)`` action tensor instead of selecting.
        """
        if not 0.0 <= p_refine <= 1.0:
            raise ValueError(f"refinement probability {p_refine} outside [0, 1]")
        gate_rng = np.random.default_rng(seed)
        action_gen = torch.Generator(device=env.device).manual_seed(seed)

        nodes = self.encode(env)
        state = env.reset(n_trajectories)
        acts, logps = [state.first_action], [torch.zeros(state.batch_shape, dtype=self.dtype, device=env.device)]
        if forced_actions is not None and not torch.equal(forced_actions[..., 0], state.first_action):
            raise ContractViolation("forced actions disagree with the opening customers")
        state = env.step(state, state.first_action).next_state

        cache = None
        refinements = 0
        max_steps = 2 * env.n_customers + env.n_depots + 1
        bidx = torch.arange(env.batch_size, device=env.device)[:, None]
        while not state.all_done():
            t = len(acts)
            if t > max_steps:
                raise ContractViolation("decoding did not terminate")
            h_cur = nodes[bidx, state.current_node]
            contexts = self.rgcr(constraint_attributes(env, state), h_cur)
            u = gate_rng.random()
            if self.tsnr is not None and u < p_refine:
                nodes = self.tsnr(nodes, contexts, distance_bias(env.dist, state.current_node))
                cache = None
                refinements += 1
            if cache is None:
                cache = self.decoder.precompute(nodes)
            mask = env.feasible_mask(state)
            log_p = self.decoder(contexts, nodes, mask, cache)
            if forced_actions is not None:
                a = forced_actions[..., t]
                lp = log_p.gather(-1, a[..., None]).squeeze(-1)
            else:
                a, lp = select(log_p, mode, action_gen)
            lp = lp.masked_fill(state.done, 0.0)
            if step_hook is not None:
                step_hook(t=t, state=state, nodes=nodes, contexts=contexts, mask=mask, log_probs=log_p)
            acts.append(a)
            logps.append(lp)
            state = env.step(state, a, mask).next_state
        return Rollout(torch.stack(acts, -1), torch.stack(logps, -1), state, env, refinements)
